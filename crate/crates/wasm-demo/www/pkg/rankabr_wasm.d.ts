/* tslint:disable */
/* eslint-disable */

/**
 * One-second bandwidth samples, comma separated. `kind` is "markov" or "cliff".
 */
export function generate_trace(kind: string, seconds: number, seed: bigint): string;

/**
 * Runs the discounted UCB selector for `epochs` rounds on arms whose
 * rewards are drawn around the given means, returning pull counts as JSON.
 */
export function run_selector(means: string, gamma: number, exploration: number, epochs: number, seed: bigint): string;

/**
 * Streams the 48-chunk demo video over the given one-second samples and
 * returns the per-chunk log as JSON. `weights` is (quality, rebuffer,
 * switch up, switch down).
 */
export function simulate(abr: string, mbps: string, weights: Float64Array): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly generate_trace: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly run_selector: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number, number];
    readonly simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;

/* tslint:disable */
/* eslint-disable */

/**
 * Planar n-point motion started from uniform points in the unit ball.
 */
export class Cloud {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Advances `steps` steps.
     */
    advance(steps: number): void;
    constructor(alpha: number, n: number, dt: number, seed: bigint);
    /**
     * Flat `x1 y1 x2 y2 ...`.
     */
    positions(): Float64Array;
    time(): number;
}

/**
 * Exponents, regime flags and the psi table of the model, as JSON.
 */
export function describe(d: number, alpha: number, points: number): string;

/**
 * Estimated and predicted Lyapunov exponents, as JSON.
 */
export function lyapunov(d: number, alpha: number, horizon: number, replicates: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_cloud_free: (a: number, b: number) => void;
    readonly cloud_advance: (a: number, b: number) => [number, number];
    readonly cloud_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly cloud_positions: (a: number) => [number, number];
    readonly cloud_time: (a: number) => number;
    readonly describe: (a: number, b: number, c: number) => [number, number, number, number];
    readonly lyapunov: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
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

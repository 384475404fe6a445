/* tslint:disable */
/* eslint-disable */

/**
 * JSON [`Heatmap`].
 */
export function focusHeatmap(m: number, theta_deg: number, phi_deg: number, r: number, width: number, height: number): string;

/**
 * JSON [`SweepReport`].
 */
export function sweepAt(m: number, n: number, s: number, x: number, y: number, z: number): string;

/**
 * JSON [`TrajectoryDemo`].
 */
export function trajectoryWithBaseline(mode: number, seed: number, t_prev: number, t_pred: number, sigma_gps: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly focusHeatmap: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly sweepAt: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly trajectoryWithBaseline: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
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

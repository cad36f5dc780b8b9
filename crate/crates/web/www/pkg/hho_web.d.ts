/* tslint:disable */
/* eslint-disable */

/**
 * Sampled field handed to the page for drawing.
 */
export class Plot {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `x, y` pairs, three vertices per triangle.
     */
    readonly coords: Float64Array;
    readonly max: number;
    readonly min: number;
    readonly summary: string;
    readonly values: Float64Array;
}

export function convergence(_case: string, degree: number, method: string, averaging: string, base: number, levels: number): string;

export function smooth_basis(degree: number, n: number, averaging: string, entity: string, index: number, component: number, samples: number): Plot;

export function solve(_case: string, degree: number, n: number, method: string, averaging: string, samples: number): Plot;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_plot_free: (a: number, b: number) => void;
    readonly convergence: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly plot_coords: (a: number) => [number, number];
    readonly plot_max: (a: number) => number;
    readonly plot_min: (a: number) => number;
    readonly plot_summary: (a: number) => [number, number];
    readonly plot_values: (a: number) => [number, number];
    readonly smooth_basis: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number];
    readonly solve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number];
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

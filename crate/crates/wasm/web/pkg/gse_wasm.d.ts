/* tslint:disable */
/* eslint-disable */

/**
 * Response magnitude in dB, one value per degree from 0 to 359, of the
 * MVDR beamformer steered to `look_deg`, read at the bin nearest `freq_hz`.
 */
export function beam_pattern(side_m: number, look_deg: number, freq_hz: number): Float64Array;

/**
 * Per 20 ms frame, 1 where the span process drops audio.
 */
export function drop_mask(n_frames: number, drop_prob: number, span_frames: number, seed: number): Uint8Array;

/**
 * Learning rate at every update of a run of `total` updates.
 */
export function lr_curve(total: number, peak: number, warmup: number, hold: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly beam_pattern: (a: number, b: number, c: number) => [number, number, number, number];
    readonly drop_mask: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly lr_curve: (a: number, b: number, c: number, d: number) => [number, number, number, number];
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

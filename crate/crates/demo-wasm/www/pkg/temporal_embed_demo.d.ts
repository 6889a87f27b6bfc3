/* tslint:disable */
/* eslint-disable */

/**
 * Time2Vec plus a sigmoid output trained on the day-of-week task.
 */
export class Trainer {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[weight, ω, φ]` of the strongest periodic component.
     */
    dominant(): Float64Array;
    epoch(): number;
    /**
     * Counts of learned `|ω|` per 0.1-wide bin, out-of-range last.
     */
    histogram(): Uint32Array;
    constructor(seed: bigint, k: number, activation_name: string, noise_rate: number, batch: number);
    /**
     * Runs `epochs` shuffled passes; returns the mean training loss of the
     * last one.
     */
    run(epochs: number): number;
    /**
     * Pre-sigmoid output over days `lo..=hi` in steps of `step`.
     */
    signal(lo: number, hi: number, step: number): Float64Array;
    test_accuracy(): number;
}

/**
 * Values of `F(ω·τ + φ)` at `n` evenly spaced times in `[lo, hi]`.
 */
export function component_curve(omega: number, phi: number, activation_name: string, lo: number, hi: number, n: number): Float64Array;

/**
 * Largest `|t2v(ατ; ω/α, φ) − t2v(τ; ω, φ)|` over `draws` random draws.
 */
export function rescaling_gap(seed: bigint, alpha: number, draws: number): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_trainer_free: (a: number, b: number) => void;
    readonly component_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly rescaling_gap: (a: bigint, b: number, c: number) => [number, number, number];
    readonly trainer_dominant: (a: number) => [number, number, number, number];
    readonly trainer_epoch: (a: number) => number;
    readonly trainer_histogram: (a: number) => [number, number];
    readonly trainer_new: (a: bigint, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly trainer_run: (a: number, b: number) => [number, number, number];
    readonly trainer_signal: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly trainer_test_accuracy: (a: number) => [number, number, number];
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

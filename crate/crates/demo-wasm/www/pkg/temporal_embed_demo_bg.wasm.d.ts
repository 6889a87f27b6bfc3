/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_trainer_free: (a: number, b: number) => void;
export const component_curve: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const rescaling_gap: (a: bigint, b: number, c: number) => [number, number, number];
export const trainer_dominant: (a: number) => [number, number, number, number];
export const trainer_epoch: (a: number) => number;
export const trainer_histogram: (a: number) => [number, number];
export const trainer_new: (a: bigint, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const trainer_run: (a: number, b: number) => [number, number, number];
export const trainer_signal: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const trainer_test_accuracy: (a: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

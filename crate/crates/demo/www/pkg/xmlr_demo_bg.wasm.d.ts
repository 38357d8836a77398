/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const box_signal: (a: number, b: number, c: number) => [number, number, number, number];
export const compare_generators: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const convse: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
export const templates: (a: number) => [number, number, number, number];
export const train_kernels: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;

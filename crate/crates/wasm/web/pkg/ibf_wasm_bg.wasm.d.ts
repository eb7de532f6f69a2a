/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_cloud_free: (a: number, b: number) => void;
export const cloud_advance: (a: number, b: number) => [number, number];
export const cloud_new: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const cloud_positions: (a: number) => [number, number];
export const cloud_time: (a: number) => number;
export const describe: (a: number, b: number, c: number) => [number, number, number, number];
export const lyapunov: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_drive: (a: number, b: number, c: number, d: number) => void;
export const demo_frame: (a: number) => [number, number, number, number];
export const demo_new: (a: number, b: number, c: bigint) => [number, number, number];
export const demo_plan_step: (a: number, b: number, c: number) => [number, number, number];
export const demo_reset: (a: number, b: bigint, c: number, d: number) => [number, number];
export const demo_scene_json: (a: number) => [number, number];
export const demo_set_target: (a: number, b: number, c: number) => [number, number];
export const demo_target: (a: number) => [number, number];
export const demo_targets: (a: number) => [number, number];
export const scene_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;

/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_scene_free: (a: number, b: number) => void;
export const scene_clear_mask: (a: number) => void;
export const scene_fill: (a: number, b: number, c: number, d: number) => [number, number];
export const scene_fill_rgba: (a: number) => [number, number];
export const scene_hole_ratio: (a: number) => number;
export const scene_hole_sharpness: (a: number) => number;
export const scene_masked_rgba: (a: number) => [number, number];
export const scene_new: (a: number) => [number, number, number];
export const scene_paint: (a: number, b: number, c: number, d: number, e: number) => void;
export const scene_random_mask: (a: number, b: number, c: number, d: number) => [number, number];
export const scene_ratio_rgba: (a: number) => [number, number];
export const scene_set_texture: (a: number, b: number, c: number, d: number) => [number, number];
export const scene_size: (a: number) => number;
export const scene_texture_rgba: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;

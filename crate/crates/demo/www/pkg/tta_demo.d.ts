/* tslint:disable */
/* eslint-disable */

export class Scene {
    free(): void;
    [Symbol.dispose](): void;
    clear_mask(): void;
    /**
     * `mode` is `swap` or `weighted`.
     */
    fill(mode: string, rounds: number): void;
    /**
     * The last fill, or the masked input when nothing has been filled.
     */
    fill_rgba(): Uint8Array;
    hole_ratio(): number;
    /**
     * Mean gradient magnitude of the filled hole region, a sharpness proxy.
     */
    hole_sharpness(): number;
    /**
     * The incomplete input with holes drawn white.
     */
    masked_rgba(): Uint8Array;
    constructor(size: number);
    /**
     * Stamps a disc of holes (or known pixels when `erase`) at `(x, y)`.
     */
    paint(x: number, y: number, radius: number, erase: boolean): void;
    /**
     * Replaces the mask with a random free-form one whose hole ratio lies
     * in `[min_ratio, max_ratio]`.
     */
    random_mask(seed: number, min_ratio: number, max_ratio: number): void;
    /**
     * Ratio map of the last fill round (black before any fill).
     */
    ratio_rgba(): Uint8Array;
    /**
     * `family` is `stripes` or `checker`.
     */
    set_texture(family: string, seed: number): void;
    size(): number;
    texture_rgba(): Uint8Array;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_scene_free: (a: number, b: number) => void;
    readonly scene_clear_mask: (a: number) => void;
    readonly scene_fill: (a: number, b: number, c: number, d: number) => [number, number];
    readonly scene_fill_rgba: (a: number) => [number, number];
    readonly scene_hole_ratio: (a: number) => number;
    readonly scene_hole_sharpness: (a: number) => number;
    readonly scene_masked_rgba: (a: number) => [number, number];
    readonly scene_new: (a: number) => [number, number, number];
    readonly scene_paint: (a: number, b: number, c: number, d: number, e: number) => void;
    readonly scene_random_mask: (a: number, b: number, c: number, d: number) => [number, number];
    readonly scene_ratio_rgba: (a: number) => [number, number];
    readonly scene_set_texture: (a: number, b: number, c: number, d: number) => [number, number];
    readonly scene_size: (a: number) => number;
    readonly scene_texture_rgba: (a: number) => [number, number];
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

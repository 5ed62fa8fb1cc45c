/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * One step in the body frame; arguments are fractions of the action
     * limits. Blocked motion is cut short.
     */
    drive(forward: number, left: number, turn: number): void;
    /**
     * Current pose, scan, reward terms, trail and last plan as JSON.
     */
    frame(): string;
    constructor(name: string, seed: bigint);
    /**
     * Plans against the simulator with `planner` and takes the first action.
     * Returns whether the target is now successfully in view.
     */
    plan_step(planner: string): boolean;
    /**
     * Starts over from a seeded pose. `tier` is `easy`, `medium` or `hard`
     * to sample a task of that difficulty (target included), or `any` for a
     * uniform free pose with the current target.
     */
    reset(seed: bigint, tier: string): void;
    scene_json(): string;
    set_target(id: string): void;
    target(): string;
    targets(): string[];
}

export function scene_names(): string[];

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_drive: (a: number, b: number, c: number, d: number) => void;
    readonly demo_frame: (a: number) => [number, number, number, number];
    readonly demo_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly demo_plan_step: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_reset: (a: number, b: bigint, c: number, d: number) => [number, number];
    readonly demo_scene_json: (a: number) => [number, number];
    readonly demo_set_target: (a: number, b: number, c: number) => [number, number];
    readonly demo_target: (a: number) => [number, number];
    readonly demo_targets: (a: number) => [number, number];
    readonly scene_names: () => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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

// Viewer state: orbit pose, active mode, and the append-only prompt history.
// A sequence gate discards stale async responses so only the latest request
// per mode ever paints.

import { OrbitParams, clampOrbit } from "./orbit.js";
import { PromptMask } from "./api.js";

export type ViewMode = "color" | "depth" | "pca-seg" | "pca-lang" | "prompt" | "query";

export interface PromptRecord {
  pixel: [number, number];
  masks: PromptMask[];
  empty: boolean;
}

export interface ViewerState {
  orbit: OrbitParams;
  mode: ViewMode;
  history: PromptRecord[];
}

export function initialState(orbit: OrbitParams): ViewerState {
  return { orbit: clampOrbit(orbit), mode: "color", history: [] };
}

export function withOrbitDelta(s: ViewerState, dAz: number, dEl: number,
                               dRadius = 0): ViewerState {
  return {
    ...s,
    orbit: clampOrbit({
      ...s.orbit,
      azimuthDeg: s.orbit.azimuthDeg + dAz,
      elevationDeg: s.orbit.elevationDeg + dEl,
      radius: s.orbit.radius + dRadius,
    }),
  };
}

export function withMode(s: ViewerState, mode: ViewMode): ViewerState {
  return { ...s, mode }; // pose untouched: mode switches preserve the camera
}

export function withPrompt(s: ViewerState, rec: PromptRecord): ViewerState {
  return { ...s, history: [...s.history, rec] }; // append-only
}

// Latest-wins gate for async responses, per channel (render mode, prompt...).
export class LatestGate {
  private seq = new Map<string, number>();

  issue(channel: string): number {
    const n = (this.seq.get(channel) ?? 0) + 1;
    this.seq.set(channel, n);
    return n;
  }

  isCurrent(channel: string, ticket: number): boolean {
    return this.seq.get(channel) === ticket;
  }
}

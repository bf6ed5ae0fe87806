// Typed client for the engine's HTTP API. Pure data in, data out; the
// viewer duplicates no engine math.

export interface SceneMeta {
  width: number;
  height: number;
  near: number;
  far: number;
  d_seg: number;
  d_lang: number;
  label_names: string[] | null;
  prompt_thresholds: [number, number, number];
  views: { pose: number[]; held_out: boolean }[];
  orbit: { radius: number; elevation_deg: number; target: [number, number, number] };
}

export interface RenderResponse {
  width: number;
  height: number;
  image_png: string;
  alpha_png: string;
  depth_png: string;
}

export interface PromptMask {
  rle: number[];
  confidence: number;
}

export interface PromptResponse {
  empty: boolean;
  size: [number, number]; // [h, w]
  masks: PromptMask[];
}

export interface LegendEntry {
  index: number;
  name: string;
  color: [number, number, number];
}

export interface QueryResponse {
  labels_png: string;
  legend: LegendEntry[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function expectJson<T>(r: Response): Promise<T> {
  const body = await r.json().catch(() => ({ error: `HTTP ${r.status}` }));
  if (!r.ok) throw new ApiError(r.status, (body as { error?: string }).error ?? `HTTP ${r.status}`);
  return body as T;
}

export class Client {
  constructor(private base: string = "") {}

  getMeta(): Promise<SceneMeta> {
    return fetch(`${this.base}/scene/meta`).then((r) => expectJson<SceneMeta>(r));
  }

  render(pose: number[]): Promise<RenderResponse> {
    return fetch(`${this.base}/render?pose=${pose.join(",")}`)
      .then((r) => expectJson<RenderResponse>(r));
  }

  prompt(pose: number[], pixel: [number, number],
         thresholds?: [number, number, number]): Promise<PromptResponse> {
    return fetch(`${this.base}/prompt`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pose, pixel, ...(thresholds ? { thresholds } : {}) }),
    }).then((r) => expectJson<PromptResponse>(r));
  }

  query(pose: number[]): Promise<QueryResponse> {
    return fetch(`${this.base}/query`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ pose, label_set: "default" }),
    }).then((r) => expectJson<QueryResponse>(r));
  }

  pca(head: "seg" | "lang", pose: number[]): Promise<{ image_png: string }> {
    return fetch(`${this.base}/pca?head=${head}&pose=${pose.join(",")}`)
      .then((r) => expectJson<{ image_png: string }>(r));
  }
}

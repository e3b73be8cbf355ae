/**
 * Typed client for the editing service HTTP API.
 *
 * Server error codes surface as ApiError with the server's validation
 * detail, so the UI can display them inline.
 */

export interface SessionState {
  has_pending: boolean;
  shape: [number, number];
  edit_count: number;
}

export interface EditPayload {
  maskPng: Uint8Array;
  sketchPng: Uint8Array;
  referencePng?: Uint8Array;
  prompt?: string;
  seed?: number;
  steps?: number;
  guidance?: number;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function raise(resp: Response): Promise<never> {
  let detail = resp.statusText;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  throw new ApiError(resp.status, detail);
}

function pngBlob(bytes: Uint8Array): Blob {
  const copy = new Uint8Array(bytes); // detach from any larger backing buffer
  return new Blob([copy], { type: "image/png" });
}

export class ApiClient {
  constructor(private baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private async pngResponse(resp: Response): Promise<Uint8Array> {
    if (!resp.ok) await raise(resp);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async createSessionFromShape(height: number, width: number): Promise<string> {
    const resp = await fetch(`${this.baseUrl}/session`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ height, width }),
    });
    if (!resp.ok) await raise(resp);
    return (await resp.json()).id as string;
  }

  async createSessionFromPng(sourcePng: Uint8Array): Promise<string> {
    const form = new FormData();
    form.append("source", pngBlob(sourcePng), "source.png");
    const resp = await fetch(`${this.baseUrl}/session`, { method: "POST", body: form });
    if (!resp.ok) await raise(resp);
    return (await resp.json()).id as string;
  }

  async submitEdit(id: string, edit: EditPayload): Promise<Uint8Array> {
    const form = new FormData();
    form.append("mask", pngBlob(edit.maskPng), "mask.png");
    form.append("sketch", pngBlob(edit.sketchPng), "sketch.png");
    if (edit.referencePng) form.append("reference", pngBlob(edit.referencePng), "reference.png");
    form.append("prompt", edit.prompt ?? "");
    form.append("seed", String(edit.seed ?? 0));
    if (edit.steps !== undefined) form.append("steps", String(edit.steps));
    if (edit.guidance !== undefined) form.append("guidance", String(edit.guidance));
    const resp = await fetch(`${this.baseUrl}/session/${id}/edit`, { method: "POST", body: form });
    return this.pngResponse(resp);
  }

  async confirm(id: string): Promise<Uint8Array> {
    return this.pngResponse(await fetch(`${this.baseUrl}/session/${id}/confirm`, { method: "POST" }));
  }

  async reject(id: string): Promise<Uint8Array> {
    return this.pngResponse(await fetch(`${this.baseUrl}/session/${id}/reject`, { method: "POST" }));
  }

  async getCanvas(id: string): Promise<Uint8Array> {
    return this.pngResponse(await fetch(`${this.baseUrl}/session/${id}/canvas`));
  }

  async getState(id: string): Promise<SessionState> {
    const resp = await fetch(`${this.baseUrl}/session/${id}/state`);
    if (!resp.ok) await raise(resp);
    return (await resp.json()) as SessionState;
  }

  async getPendingPart(id: string, part: "mask" | "sketch" | "reference"): Promise<Uint8Array> {
    return this.pngResponse(await fetch(`${this.baseUrl}/session/${id}/pending/${part}`));
  }
}

/** Control-API client. The UI talks to the tracker only through these
 * endpoints; it never touches the pose stream socket directly. */

export interface StreamMass {
  class_id: number;
  bbox: [number, number, number, number];
  centroid: [number, number];
  pixel_count: number;
}

export interface StreamMarker {
  id: number;
  corners: [number, number][];
}

export interface StreamObject {
  id: string;
  kind: string;
  err_px: number;
}

export interface StreamMessage {
  frame_index: number;
  masses: StreamMass[];
  markers: StreamMarker[];
  objects: StreamObject[];
  rates: Record<string, number>;
  preview: string | null;
}

export interface EngineState {
  frames_processed: number;
  background_captured: boolean;
  capture_in_progress: boolean;
  rates: Record<string, number>;
}

export class ApiError extends Error {
  constructor(readonly status: number, body: string) {
    super(`HTTP ${status}: ${body}`);
  }
}

async function expectOk(resp: Response): Promise<Response> {
  if (!resp.ok) {
    throw new ApiError(resp.status, await resp.text());
  }
  return resp;
}

export async function getConfig(base = ""): Promise<string> {
  const resp = await expectOk(await fetch(`${base}/api/v1/config`));
  return resp.text();
}

/** PUT the draft; returns the canonical applied document on success.
 * A 400 carries the server's problem list in the body. */
export async function putConfig(text: string, base = ""): Promise<string> {
  const resp = await expectOk(
    await fetch(`${base}/api/v1/config`, {
      method: "PUT",
      headers: { "Content-Type": "application/x-yaml" },
      body: text,
    }),
  );
  return resp.text();
}

export async function getState(base = ""): Promise<EngineState> {
  const resp = await expectOk(await fetch(`${base}/api/v1/state`));
  return (await resp.json()) as EngineState;
}

export async function captureBackground(frames?: number, base = ""): Promise<void> {
  await expectOk(
    await fetch(`${base}/api/v1/background/capture`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(frames === undefined ? {} : { frames }),
    }),
  );
}

/** Split an NDJSON byte stream into complete lines; carry partial tails
 * across chunks. Feed chunks in order, then flush() at end-of-stream. */
export class NdjsonSplitter {
  private tail = "";
  private readonly decoder = new TextDecoder();

  feed(chunk: Uint8Array): string[] {
    this.tail += this.decoder.decode(chunk, { stream: true });
    const parts = this.tail.split("\n");
    this.tail = parts.pop() ?? "";
    return parts.filter((p) => p.length > 0);
  }

  flush(): string[] {
    const rest = this.tail;
    this.tail = "";
    return rest.length > 0 ? [rest] : [];
  }
}

/** Consume the server-push preview channel; latest-wins rendering is the
 * caller's concern — this just delivers each message in order. */
export async function streamMessages(
  onMessage: (msg: StreamMessage) => void,
  signal?: AbortSignal,
  base = "",
): Promise<void> {
  const resp = await expectOk(await fetch(`${base}/api/v1/stream`, { signal }));
  const reader = resp.body!.getReader();
  const splitter = new NdjsonSplitter();
  for (;;) {
    const { done, value } = await reader.read();
    const lines = done ? splitter.flush() : splitter.feed(value!);
    for (const line of lines) {
      onMessage(JSON.parse(line) as StreamMessage);
    }
    if (done) return;
  }
}

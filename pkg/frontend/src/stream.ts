// NDJSON push-stream consumer for /scan/live.

import type { StreamEvent } from "./types.js";

export type EventHandler = (event: StreamEvent) => void;

/** Split streamed text chunks into parsed JSON-line events. */
export class LineDecoder {
  private buffer = "";

  constructor(private onEvent: EventHandler) {}

  push(chunk: string): void {
    this.buffer += chunk;
    for (;;) {
      const nl = this.buffer.indexOf("\n");
      if (nl < 0) break;
      const line = this.buffer.slice(0, nl).trim();
      this.buffer = this.buffer.slice(nl + 1);
      if (line.length === 0) continue;
      this.onEvent(JSON.parse(line) as StreamEvent);
    }
  }
}

const TERMINAL = new Set(["done", "cancelled", "failed"]);

export function isTerminal(event: StreamEvent): boolean {
  return event.type === "state" && TERMINAL.has(String(event.payload));
}

/**
 * Follow the live stream of one job, invoking the handler per event,
 * until the terminal state event arrives or the stream closes.
 */
export async function followJob(
  baseUrl: string,
  jobId: string,
  onEvent: EventHandler,
  fetchImpl: typeof fetch = fetch,
): Promise<void> {
  const response = await fetchImpl(
    `${baseUrl}/scan/live?job=${encodeURIComponent(jobId)}`);
  if (!response.ok || response.body === null) {
    throw new Error(`live stream unavailable for ${jobId}`);
  }
  let finished = false;
  const decoder = new LineDecoder((event) => {
    onEvent(event);
    if (isTerminal(event)) finished = true;
  });
  const reader = response.body.getReader();
  const text = new TextDecoder();
  while (!finished) {
    const { done, value } = await reader.read();
    if (done) break;
    decoder.push(text.decode(value, { stream: true }));
  }
  await reader.cancel().catch(() => undefined);
}

/** Deterministic in-memory stand-in for the editing service.
 *
 * Mirrors the real service's contract that matters to the UI: responses are
 * a pure function of the request body (statelessness), so identical
 * requests yield byte-identical images.
 */

import { FetchLike } from "../src/api.js";

function fnv1a(s: string): string {
  let h = 0x811c9dc5;
  for (let i = 0; i < s.length; i++) {
    h ^= s.charCodeAt(i);
    h = Math.imul(h, 0x01000193);
  }
  return (h >>> 0).toString(16).padStart(8, "0");
}

export interface RecordedRequest {
  path: string;
  body: Record<string, unknown>;
}

export function makeMockService(opts?: { failCfg?: number }) {
  const requests: RecordedRequest[] = [];

  const fetchFn: FetchLike = async (url, init) => {
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const body = init?.body ? JSON.parse(init.body as string) : {};
    requests.push({ path, body });

    if (path === "/vocab") {
      return json(200, {
        fields: { shape: ["circle", "square", "triangle"], size: ["small", "large"] },
        grammar: "set <field> <value>",
      });
    }
    if (path === "/generate") {
      return json(200, {
        image: `png:${fnv1a(JSON.stringify(body))}`,
        factors: body.factors,
      });
    }
    if (path === "/edit") {
      if (opts?.failCfg !== undefined && body.cfg_text === opts.failCfg) {
        return json(400, { error: "bad_cfg", detail: "induced failure" });
      }
      if (!body.instruction || !body.instruction.field) {
        return json(400, { error: "bad_instruction", detail: "instruction must be {field, value}" });
      }
      const digest = fnv1a(JSON.stringify(body));
      return json(200, {
        image: `png:${digest}`,
        metrics: { dir: 0.75, sim: 0.9, edit_success: 1 },
      });
    }
    return json(404, { error: "not_found", detail: path });
  };

  return { fetchFn, requests };
}

function json(status: number, payload: unknown): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

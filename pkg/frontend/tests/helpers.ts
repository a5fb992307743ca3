import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { FetchLike } from "../src/api.js";

const here = dirname(fileURLToPath(import.meta.url));

export function fixture<T = unknown>(name: string): T {
  const raw = readFileSync(join(here, "..", "fixtures", `${name}.json`), "utf-8");
  return JSON.parse(raw) as T;
}

export interface RecordedCall {
  url: string;
  method: string;
  headers: Record<string, string>;
  body: unknown;
}

/** fetch stub returning canned payloads keyed by "METHOD path". */
export function stubFetch(
  routes: Record<string, { status?: number; body: unknown } | ((call: RecordedCall) => { status?: number; body: unknown })>,
): { fetch: FetchLike; calls: RecordedCall[] } {
  const calls: RecordedCall[] = [];
  const impl: FetchLike = async (url, init = {}) => {
    const method = (init.method ?? "GET").toUpperCase();
    const path = url.split("?")[0] ?? url;
    const call: RecordedCall = {
      url,
      method,
      headers: (init.headers ?? {}) as Record<string, string>,
      body: init.body ? JSON.parse(String(init.body)) : null,
    };
    calls.push(call);
    const route = routes[`${method} ${path}`];
    if (!route) {
      return new Response(JSON.stringify({ detail: `no route ${method} ${path}` }), {
        status: 404,
      });
    }
    const outcome = typeof route === "function" ? route(call) : route;
    return new Response(JSON.stringify(outcome.body), { status: outcome.status ?? 200 });
  };
  return { fetch: impl, calls };
}

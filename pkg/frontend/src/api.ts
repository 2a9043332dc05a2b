// Typed client for the adjudication service JSON API.

export interface ContextTurn {
  turn_index: number;
  speaker: string;
  text: string;
  focal: boolean;
}

export type Choice = "RATER_1" | "RATER_2";

export interface Item {
  item_id: string;
  session_id: string;
  turn_index: number;
  context: ContextTurn[];
  label_rater_1: string;
  label_rater_2: string;
  state: "PENDING" | "DECIDED";
  decision: Choice | null;
}

export interface Meta {
  item_count: number;
  decided_count: number;
  pending_count: number;
  digest: string;
  created_at: string;
}

export interface DecisionResult {
  item: Item;
  meta: Meta;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

/** Decision on an already-decided item; resolve via the override dialog. */
export class ConflictError extends ApiError {
  constructor(message: string) {
    super(409, message);
  }
}

/** fetch itself failed; the decision should be queued and retried. */
export class NetworkError extends Error {}

async function fetchJSON<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new NetworkError(err instanceof Error ? err.message : String(err));
  }
  if (!resp.ok) {
    let detail = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status line
    }
    if (resp.status === 409) throw new ConflictError(detail);
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export function getMeta(): Promise<Meta> {
  return fetchJSON<Meta>("/api/packet/meta");
}

const PAGE_LIMIT = 500;

export async function listAllItems(): Promise<Item[]> {
  const items: Item[] = [];
  for (let offset = 0; ; offset += PAGE_LIMIT) {
    const page = await fetchJSON<{ items: Item[]; total_matching: number }>(
      `/api/items?offset=${offset}&limit=${PAGE_LIMIT}`,
    );
    items.push(...page.items);
    if (items.length >= page.total_matching || page.items.length === 0) break;
  }
  return items;
}

export function getItem(itemId: string): Promise<Item> {
  return fetchJSON<Item>(`/api/items/${encodeURIComponent(itemId)}`);
}

export function postDecision(
  itemId: string,
  choice: Choice,
  override = false,
): Promise<DecisionResult> {
  return fetchJSON<DecisionResult>(
    `/api/items/${encodeURIComponent(itemId)}/decision`,
    {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ choice, override }),
    },
  );
}

export function exportPacket(): Promise<{ path: string; meta: Meta }> {
  return fetchJSON("/api/export", {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: "{}",
  });
}

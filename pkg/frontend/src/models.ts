// Pure view-model builders: everything here is derived from API responses
// on each refresh, never cached across renders.

import type { FeedCardJson, PluginJson, PluginParamJson, TreeJson, TreeNodeJson } from "./api.js";

export interface CardViewModel {
  feedId: number;
  title: string;
  owner: string;
  tags: string[];
  bookmarked: boolean;
  rollup: string;
  nodeCount: number;
  thumbnail: string; // placeholder glyph; volume rendering is out of scope
}

// worst-first severity for the card rollup
const SEVERITY: Record<string, number> = {
  ERROR: 5,
  CANCELLED: 4,
  RUNNING: 3,
  DISPATCHED: 2,
  CREATED: 1,
  SUCCESS: 0,
};

export function statusRollup(statuses: string[]): string {
  let worst = "SUCCESS";
  for (const status of statuses) {
    if ((SEVERITY[status] ?? 0) > (SEVERITY[worst] ?? 0)) {
      worst = status;
    }
  }
  return worst;
}

export function toCard(feed: FeedCardJson): CardViewModel {
  return {
    feedId: feed.id,
    title: feed.title,
    owner: feed.owner,
    tags: [...feed.tags].sort(),
    bookmarked: feed.bookmarked,
    rollup: statusRollup(feed.node_statuses ?? []),
    nodeCount: feed.node_count ?? 0,
    thumbnail: "🧠",
  };
}

export interface TreeRowViewModel {
  nodeId: number | "root";
  depth: number;
  label: string;
  status: string;
  paramSummary: string;
  outputFiles: string[];
  error: string | null;
}

export function toTreeRows(tree: TreeJson): TreeRowViewModel[] {
  // the API already serializes parent-before-child; preserve its order
  return tree.nodes.map((node: TreeNodeJson) => ({
    nodeId: node.node_id,
    depth: node.depth,
    label: node.kind === "data" ? `data: ${node.title ?? "study"}` : node.plugin ?? "?",
    status: node.status,
    paramSummary: summarizeParams(node.params ?? {}),
    outputFiles: node.output_files ?? [],
    error: node.error ?? null,
  }));
}

export function summarizeParams(params: Record<string, unknown>): string {
  const parts = Object.entries(params).map(([key, value]) => `${key}=${value}`);
  return parts.join(", ");
}

export function allTerminal(tree: TreeJson): boolean {
  return tree.nodes.every((n) =>
    n.status === "SUCCESS" || n.status === "ERROR" || n.status === "CANCELLED",
  );
}

// -- plugin parameter forms ---------------------------------------------------

export interface ParamField {
  name: string;
  type: PluginParamJson["type"];
  required: boolean;
  default: unknown;
  choices: string[] | null;
}

export function formFields(plugin: PluginJson): ParamField[] {
  return plugin.parameters.map((p) => ({
    name: p.name,
    type: p.type,
    required: p.required,
    default: p.default,
    choices: p.choices,
  }));
}

export interface ParamValidation {
  values: Record<string, unknown>;
  errors: Record<string, string>;
  ok: boolean;
}

// client-side check mirroring the server schema: required fields must be
// filled and typed fields must parse, before any request is sent
export function validateForm(fields: ParamField[], raw: Record<string, string>): ParamValidation {
  const values: Record<string, unknown> = {};
  const errors: Record<string, string> = {};
  for (const field of fields) {
    const text = (raw[field.name] ?? "").trim();
    if (text === "") {
      if (field.required) {
        errors[field.name] = "required";
      }
      continue; // optional and blank: server applies the default
    }
    if (field.type === "int") {
      if (!/^[+-]?\d+$/.test(text)) {
        errors[field.name] = "must be an integer";
        continue;
      }
      values[field.name] = parseInt(text, 10);
    } else if (field.type === "real") {
      const parsed = Number(text);
      if (!Number.isFinite(parsed)) {
        errors[field.name] = "must be a number";
        continue;
      }
      values[field.name] = parsed;
    } else if (field.type === "flag") {
      values[field.name] = text === "true" || text === "1" || text === "yes";
    } else if (field.type === "choice") {
      if (field.choices && !field.choices.includes(text)) {
        errors[field.name] = `must be one of ${field.choices.join(", ")}`;
        continue;
      }
      values[field.name] = text;
    } else {
      values[field.name] = text;
    }
  }
  return { values, errors, ok: Object.keys(errors).length === 0 };
}

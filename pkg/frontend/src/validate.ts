/** Client-side config validation.
 *
 * Mirrors the engine's validator message-for-message so the UI accepts a
 * document iff the server does. Parity is enforced by replaying the shared
 * validation corpus in the test suite.
 */

export const CONFIG_SCHEMA = "fidtrack-config/1";

type Doc = Record<string, unknown>;

function isMap(v: unknown): v is Doc {
  return typeof v === "object" && v !== null && !Array.isArray(v);
}

function num(v: unknown, fallback: number): number {
  return typeof v === "number" ? v : fallback;
}

/** Python-style repr for strings: 'wand'. */
function repr(v: unknown): string {
  if (typeof v === "string") {
    return "'" + v.replace(/\\/g, "\\\\").replace(/'/g, "\\'") + "'";
  }
  return String(v);
}

/** Collect every invariant violation in a config document; empty = valid. */
export function validateConfigDoc(doc: unknown): string[] {
  const problems: string[] = [];
  if (!isMap(doc)) {
    return ["document must be a mapping"];
  }
  if (doc["schema"] !== CONFIG_SCHEMA) {
    problems.push(`schema must be ${repr(CONFIG_SCHEMA)}`);
  }

  const cam = doc["camera"];
  if (!isMap(cam)) {
    problems.push("camera section missing");
  } else {
    for (const k of ["fx", "fy", "cx", "cy", "width", "height"]) {
      if (!(k in cam)) {
        problems.push(`camera.${k} missing`);
      }
    }
    if (num(cam["fx"], 1) <= 0 || num(cam["fy"], 1) <= 0) {
      problems.push("camera focal lengths must be positive");
    }
    if (num(cam["width"], 1) <= 0 || num(cam["height"], 1) <= 0) {
      problems.push("camera resolution must be positive");
    }
  }

  const bg = doc["background"];
  if (isMap(bg) && Object.keys(bg).length > 0) {
    if (num(bg["tau"], 50) < 0) {
      problems.push("background.tau must be >= 0");
    }
    if (num(bg["capture_frames"], 1) < 1) {
      problems.push("background.capture_frames must be >= 1");
    }
  }

  const cp = isMap(doc["colored_points"]) ? (doc["colored_points"] as Doc) : {};
  const params = isMap(cp["params"]) ? (cp["params"] as Doc) : {};
  const alpha = num(params["alpha"], 0.7);
  if (!(0 < alpha && alpha <= 1)) {
    problems.push("colored_points.params.alpha must be in (0, 1]");
  }
  if (num(params["dist_cutoff"], 32.0) <= 0) {
    problems.push("colored_points.params.dist_cutoff must be positive");
  }
  if (num(params["min_pixels"], 8) < 1) {
    problems.push("colored_points.params.min_pixels must be >= 1");
  }

  const classIds = new Set<unknown>();
  const classes = Array.isArray(cp["classes"]) ? cp["classes"] : [];
  for (const c of classes) {
    if (!isMap(c)) continue;
    const cid = c["id"];
    if (classIds.has(cid)) {
      problems.push(`duplicate color class id ${cid}`);
    }
    classIds.add(cid);
    for (const hk of ["h_lo", "h_hi"]) {
      const h = num(c[hk], 0);
      if (!(0 <= h && h < 360)) {
        problems.push(`class ${cid}: ${hk} must be in [0, 360)`);
      }
    }
    for (const [lo, hi] of [["s_lo", "s_hi"], ["v_lo", "v_hi"]] as const) {
      const a = num(c[lo], 0);
      const b = num(c[hi], 1);
      if (!(0 <= a && a <= b && b <= 1)) {
        problems.push(`class ${cid}: ${lo}..${hi} out of order`);
      }
    }
  }

  const seenObjects = new Set<unknown>();
  const objects = Array.isArray(cp["objects"]) ? cp["objects"] : [];
  for (const o of objects) {
    if (!isMap(o)) continue;
    const oid = o["object_id"];
    if (seenObjects.has(oid)) {
      problems.push(`duplicate object_id ${repr(oid)}`);
    }
    seenObjects.add(oid);
    const line0 = Array.isArray(o["line0"]) ? o["line0"] : [];
    const line1 = Array.isArray(o["line1"]) ? o["line1"] : [];
    const slots = [...line0, ...line1];
    if (slots.length !== 4 || new Set(slots).size !== 4) {
      problems.push(`object ${repr(oid)}: topology needs 4 distinct classes`);
    }
    for (const s of slots) {
      if (!classIds.has(s)) {
        problems.push(`object ${repr(oid)}: unknown class id ${s}`);
      }
    }
    if (num(o["marker_size"], 0) <= 0) {
      problems.push(`object ${repr(oid)}: marker_size must be positive`);
    }
  }

  const bn = doc["binary"];
  if (isMap(bn) && Object.keys(bn).length > 0) {
    const d = bn["dictionary"];
    if (isMap(d) && Object.keys(d).length > 0 && num(d["count"], 1) < 1) {
      problems.push("binary.dictionary.count must be >= 1");
    }
    const sizes = isMap(bn["marker_sizes"]) ? (bn["marker_sizes"] as Doc) : {};
    for (const [mid, size] of Object.entries(sizes)) {
      if (num(size, 1) <= 0) {
        problems.push(`binary.marker_sizes[${mid}] must be positive`);
      }
    }
    if (num(bn["default_marker_size"], 0) < 0) {
      problems.push("binary.default_marker_size must be >= 0");
    }
  }

  const st = doc["stream"];
  if (isMap(st) && Object.keys(st).length > 0) {
    const kind = st["kind"] ?? "tcp";
    if (kind !== "unix" && kind !== "tcp") {
      problems.push("stream.kind must be 'unix' or 'tcp'");
    }
  }
  return problems;
}

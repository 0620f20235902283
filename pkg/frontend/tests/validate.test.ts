import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { parse } from "yaml";
import { describe, expect, it } from "vitest";

import { validateConfigDoc } from "../src/validate.js";

interface CorpusCase {
  name: string;
  valid: boolean;
  error_substring?: string;
  yaml: string;
}

const corpusPath = join(
  dirname(fileURLToPath(import.meta.url)),
  "..",
  "..",
  "tests",
  "data",
  "config_corpus.json",
);
const corpus: CorpusCase[] = JSON.parse(readFileSync(corpusPath, "utf-8"));

describe("client-side validation matches the server corpus", () => {
  it("corpus is non-trivial", () => {
    expect(corpus.length).toBeGreaterThanOrEqual(8);
    expect(corpus.some((c) => c.valid)).toBe(true);
    expect(corpus.some((c) => !c.valid)).toBe(true);
  });

  for (const c of corpus) {
    it(c.name, () => {
      const problems = validateConfigDoc(parse(c.yaml));
      if (c.valid) {
        expect(problems).toEqual([]);
      } else {
        expect(problems.length).toBeGreaterThan(0);
        expect(
          problems.some((p) => p.includes(c.error_substring!)),
          `expected a problem containing ${JSON.stringify(c.error_substring)}, got ${JSON.stringify(problems)}`,
        ).toBe(true);
      }
    });
  }
});

describe("validation details", () => {
  it("non-mapping document", () => {
    expect(validateConfigDoc("just a string")).toEqual([
      "document must be a mapping",
    ]);
    expect(validateConfigDoc(null)).toEqual(["document must be a mapping"]);
  });

  it("collects every violation, not just the first", () => {
    const doc = parse(
      "schema: wrong\ncolored_points:\n  params: {alpha: 2, dist_cutoff: -1}\n",
    );
    const problems = validateConfigDoc(doc);
    expect(problems.length).toBeGreaterThanOrEqual(4);
  });
});

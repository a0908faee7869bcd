import { describe, expect, it } from "vitest";

import type { Highlight } from "../src/api.js";
import {
  diffAllZero,
  diffHtml,
  diffModel,
  docListHtml,
  escapeHtml,
  heatmapHtml,
  heatmapModel,
  whatifHtml,
  whatifModel,
} from "../src/render.js";

const mixedPayload: Highlight[] = [
  { token: "good", word_score: 0.8, intensity: 1.0, sign: 1 },
  { token: "meh", word_score: 0.0, intensity: 0.0, sign: 0 },
  { token: "awful", word_score: -0.4, intensity: 0.5, sign: -1 },
  { token: "fine", word_score: 0.2, intensity: 0.25, sign: 1 },
];

describe("heatmap", () => {
  it("copies every number verbatim from the payload", () => {
    const spans = heatmapModel(mixedPayload);
    spans.forEach((span, i) => {
      expect(span.wordScore).toBe(mixedPayload[i].word_score);
      expect(span.intensity).toBe(mixedPayload[i].intensity);
      expect(span.sign).toBe(mixedPayload[i].sign);
      expect(span.opacity).toBe(mixedPayload[i].intensity);
    });
  });

  it("red/blue span counts equal the payload sign counts", () => {
    const spans = heatmapModel(mixedPayload);
    const reds = spans.filter((s) => s.color === "red").length;
    const blues = spans.filter((s) => s.color === "blue").length;
    expect(reds).toBe(mixedPayload.filter((h) => h.sign > 0).length);
    expect(blues).toBe(mixedPayload.filter((h) => h.sign < 0).length);
    const html = heatmapHtml(spans);
    expect(html.match(/rgba\(214, 39, 40/g)?.length ?? 0).toBe(reds);
    expect(html.match(/rgba\(31, 119, 180/g)?.length ?? 0).toBe(blues);
  });

  it("all-zero intensities render uniformly unshaded", () => {
    const zero: Highlight[] = [
      { token: "a", word_score: 0, intensity: 0, sign: 0 },
      { token: "b", word_score: 0, intensity: 0, sign: 0 },
    ];
    const html = heatmapHtml(heatmapModel(zero));
    expect(html).not.toContain("background-color");
  });

  it("a single full-intensity token is fully saturated", () => {
    const one: Highlight[] = [
      { token: "only", word_score: -2.5, intensity: 1.0, sign: -1 },
    ];
    const html = heatmapHtml(heatmapModel(one));
    expect(html).toContain("rgba(31, 119, 180, 1)");
    expect(html).toContain('title="-2.5"');
  });

  it("empty payload renders the empty-state message", () => {
    expect(heatmapHtml(heatmapModel([]))).toContain("empty-state");
  });

  it("is deterministic: same payload, same markup", () => {
    const a = heatmapHtml(heatmapModel(mixedPayload));
    const b = heatmapHtml(heatmapModel(mixedPayload));
    expect(a).toBe(b);
  });

  it("escapes markup in tokens", () => {
    const sneaky: Highlight[] = [
      { token: "<script>", word_score: 1, intensity: 1, sign: 1 },
    ];
    const html = heatmapHtml(heatmapModel(sneaky));
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
  });
});

describe("what-if bars", () => {
  const resp = {
    probs_before: [0.9, 0.1],
    probs_after: [0.4, 0.6],
  };

  it("bar values come straight from the response", () => {
    const bars = whatifModel(resp);
    expect(bars.map((b) => b.before)).toEqual(resp.probs_before);
    expect(bars.map((b) => b.after)).toEqual(resp.probs_after);
    expect(bars.map((b) => b.classIndex)).toEqual([0, 1]);
  });

  it("identical before/after give identical bar pairs", () => {
    const same = whatifModel({ probs_before: [0.7, 0.3], probs_after: [0.7, 0.3] });
    same.forEach((b) => expect(b.after).toBe(b.before));
  });

  it("html records predictions and widths", () => {
    const html = whatifHtml(whatifModel(resp), 0, 1);
    expect(html).toContain('data-pred-before="0"');
    expect(html).toContain('data-pred-after="1"');
    expect(html).toContain("width: 90%");
    expect(html).toContain("width: 60%");
  });
});

describe("diff chart", () => {
  it("sorts bars by magnitude, ties to the lower index", () => {
    const bars = diffModel([0.5, -2.0, 0.5, 1.0]);
    expect(bars.map((b) => b.featureIndex)).toEqual([1, 3, 0, 2]);
    expect(bars[0].value).toBe(-2.0);
    expect(bars[0].magnitude).toBe(2.0);
  });

  it("negated payload flips bar signs but keeps the ranking", () => {
    const plus = diffModel([0.5, -2.0, 1.0]);
    const minus = diffModel([-0.5, 2.0, -1.0]);
    expect(minus.map((b) => b.featureIndex)).toEqual(plus.map((b) => b.featureIndex));
    minus.forEach((b, i) => expect(b.value).toBe(-plus[i].value));
  });

  it("all-zero chart shows the zero note", () => {
    const html = diffHtml(diffModel([0, 0, 0]), "column", []);
    expect(html).toContain("zero-note");
    expect(diffAllZero({ column_diffs: [0, 0], filter_diffs: [0] })).toBe(true);
  });

  it("top bar is the payload argmax by magnitude", () => {
    const values = [0.1, -0.7, 0.3];
    const html = diffHtml(diffModel(values), "filter", []);
    const firstRow = html.indexOf('data-feature="1"');
    const otherRow = html.indexOf('data-feature="2"');
    expect(firstRow).toBeGreaterThan(-1);
    expect(firstRow).toBeLessThan(otherRow);
  });

  it("marks selected features", () => {
    const html = diffHtml(diffModel([1.0, 0.5]), "column", [1]);
    expect(html).toContain('diff-row selected" data-kind="column" data-feature="1"');
  });
});

describe("doc list", () => {
  it("renders rows with match badges", () => {
    const html = docListHtml(
      [
        { docId: 0, snippet: "alpha", trueLabel: 0, predictedLabel: 0 },
        { docId: 1, snippet: "beta", trueLabel: 1, predictedLabel: 0 },
      ],
      1,
    );
    expect(html).toContain('data-doc="0"');
    expect(html).toContain("badge ok");
    expect(html).toContain("badge miss");
    expect(html).toContain("doc-row selected");
  });

  it("empty corpus renders the empty state", () => {
    expect(docListHtml([], null)).toContain("empty-state");
  });
});

describe("escapeHtml", () => {
  it("handles the dangerous characters", () => {
    expect(escapeHtml('<a href="x">&</a>')).toBe("&lt;a href=&quot;x&quot;&gt;&amp;&lt;/a&gt;");
  });
});

import { describe, expect, it } from "vitest";

import { EditorDocument } from "../src/document.js";
import { decodeRLE } from "../src/rle.js";

function makeDoc() {
  return new EditorDocument(32, 32, 0);
}

describe("EditorDocument painting", () => {
  it("instance brush sets id and class together", () => {
    const doc = makeDoc();
    const id = doc.allocateInstanceId();
    doc.paintInstance(10, 10, 4, id, 2);
    doc.endStroke();
    const idx = 10 * 32 + 10;
    expect(doc.instances[idx]).toBe(id);
    expect(doc.labels[idx]).toBe(2);
    expect(doc.instancesPresent()).toEqual([id]);
    expect(doc.classOfInstance(id)).toBe(2);
  });

  it("paint then undo restores the exact prior grids", () => {
    const doc = makeDoc();
    const labelsBefore = doc.labels.slice();
    const instancesBefore = doc.instances.slice();
    doc.paintInstance(5, 5, 3, doc.allocateInstanceId(), 3);
    doc.endStroke();
    expect(doc.undo()).toBe(true);
    expect([...doc.labels]).toEqual([...labelsBefore]);
    expect([...doc.instances]).toEqual([...instancesBefore]);
  });

  it("redo restores the undone stroke", () => {
    const doc = makeDoc();
    doc.paintInstance(5, 5, 3, doc.allocateInstanceId(), 3);
    doc.endStroke();
    const after = doc.labels.slice();
    doc.undo();
    expect(doc.redo()).toBe(true);
    expect([...doc.labels]).toEqual([...after]);
  });

  it("supports at least 20 undo levels", () => {
    const doc = makeDoc();
    for (let i = 0; i < 25; i++) {
      doc.paintInstance(1 + (i % 30), 1 + (i % 30), 1, doc.allocateInstanceId(), 2);
      doc.endStroke();
    }
    let undone = 0;
    while (doc.undo()) {
      undone++;
    }
    expect(undone).toBeGreaterThanOrEqual(20);
  });

  it("new instance ids are strictly increasing, even after erase", () => {
    const doc = makeDoc();
    const a = doc.allocateInstanceId();
    doc.paintInstance(4, 4, 2, a, 2);
    doc.endStroke();
    doc.eraseInstance(4, 4, 6);
    doc.endStroke();
    const b = doc.allocateInstanceId();
    expect(b).toBeGreaterThan(a);
  });

  it("class paint over an instance reassigns and warns", () => {
    const doc = makeDoc();
    const id = doc.allocateInstanceId();
    doc.paintInstance(10, 10, 5, id, 2);
    doc.endStroke();
    let warned: number[] = [];
    doc.onInstanceReassigned = (ids) => {
      warned = ids;
    };
    // stroke covers part of the instance with a different class
    doc.paintClass(7, 10, 2, 3);
    doc.endStroke();
    expect(warned).toContain(id);
    // remaining pixels of the instance still carry exactly one class
    const classes = new Set<number>();
    for (let i = 0; i < doc.instances.length; i++) {
      if (doc.instances[i] === id) {
        classes.add(doc.labels[i]);
      }
    }
    expect(classes.size).toBe(1);
  });
});

describe("request serialization", () => {
  it("encodes grids that decode back exactly", () => {
    const doc = makeDoc();
    doc.paintInstance(8, 8, 4, doc.allocateInstanceId(), 2);
    doc.paintInstance(20, 20, 5, doc.allocateInstanceId(), 3);
    doc.endStroke();
    const body = doc.toRequestBody(9);
    const labels = decodeRLE(body.label.rle);
    const instances = decodeRLE(body.instance.rle);
    expect([...labels.grid]).toEqual([...doc.labels]);
    expect([...instances.grid]).toEqual([...doc.instances]);
    expect(body.seed).toBe(9);
  });

  it("includes style choices only for present instances", () => {
    const doc = makeDoc();
    const a = doc.allocateInstanceId();
    doc.paintInstance(8, 8, 4, a, 2);
    doc.endStroke();
    doc.setStyle(a, { cluster: 1 });
    doc.setStyle(999, { cluster: 0 }); // stale entry for an absent instance
    const body = doc.toRequestBody(0);
    expect(Object.keys(body.styles)).toEqual([String(a)]);
  });

  it("style choices persist across serializations until changed", () => {
    const doc = makeDoc();
    const a = doc.allocateInstanceId();
    doc.paintInstance(8, 8, 4, a, 2);
    doc.endStroke();
    doc.setStyle(a, { cluster: 2 });
    expect(doc.toRequestBody(0).styles[String(a)]).toEqual({ cluster: 2 });
    expect(doc.toRequestBody(1).styles[String(a)]).toEqual({ cluster: 2 });
    doc.setStyle(a, "random");
    expect(doc.toRequestBody(2).styles[String(a)]).toBe("random");
  });
});

describe("boundary overlay", () => {
  it("marks 4-neighbor id changes and nothing on constant maps", () => {
    const doc = makeDoc();
    expect([...doc.boundaryMask()].every((v) => v === 0)).toBe(true);
    doc.paintInstance(10, 10, 3, doc.allocateInstanceId(), 2);
    doc.endStroke();
    const mask = doc.boundaryMask();
    expect([...mask].some((v) => v === 1)).toBe(true);
  });
});

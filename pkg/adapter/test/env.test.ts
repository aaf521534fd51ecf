import { describe, expect, it } from "vitest";

import { TabletopEnv, failureNote, simulate } from "../src/env";
import { loadSuite } from "../src/scenarios";

const suite = loadSuite("deterministic-tabletop-transfer");

function scenario(taskId: string) {
  const found = suite.scenarios.find((s) => s.taskId === taskId);
  if (!found) throw new Error(`missing scenario ${taskId}`);
  return found;
}

const NAIVE_SHELF = ["grasp the mug", "move to the shelf", "open gripper", "back to default pose"];
const FIXED_SHELF = [
  "grasp the mug",
  "move to 5cm above the shelf",
  "open gripper",
  "back to default pose",
];
const NAIVE_RELEASE = [
  "grasp the pear",
  "move to the basket",
  "grasp the lemon",
  "move to the basket",
  "open gripper",
  "back to default pose",
];

describe("simulate", () => {
  it("accepts plans that satisfy goal and guards", () => {
    const outcome = simulate(scenario("needs-offset"), FIXED_SHELF);
    expect(outcome.success).toBe(true);
    expect(outcome.haltedAtStep).toBeNull();
  });

  it("halts at the hazard-triggering step when the guard is missing", () => {
    const outcome = simulate(scenario("needs-offset"), NAIVE_SHELF);
    expect(outcome.success).toBe(false);
    expect(outcome.haltedAtStep).toBe(1);
    expect(outcome.marker).toBe("collision-shelf");
  });

  it("flags grasping while holding as a logical failure after full execution", () => {
    const outcome = simulate(scenario("logical-release"), NAIVE_RELEASE);
    expect(outcome.success).toBe(false);
    expect(outcome.haltedAtStep).toBeNull();
    expect(outcome.marker).toBe("held-object-conflict");
  });

  it("flags duplicate placements via distinct_steps", () => {
    const plan = [
      "grasp the blue cup",
      "move to 5cm on top of the black tray",
      "open gripper",
      "grasp the white cup",
      "move to 5cm on top of the black tray",
      "open gripper",
    ];
    const outcome = simulate(scenario("tray-cups"), plan);
    expect(outcome.marker).toBe("cups-collided");
    expect(outcome.haltedAtStep).toBeNull();
  });

  it("reports an unmet goal as goal-incomplete", () => {
    const outcome = simulate(scenario("press-button"), ["wave at the button"]);
    expect(outcome.marker).toBe("goal-incomplete");
  });

  it("formats failure notes with marker and step", () => {
    const outcome = simulate(scenario("needs-offset"), NAIVE_SHELF);
    expect(failureNote(outcome)).toMatch(/^marker:collision-shelf; step=1; /);
  });
});

describe("TabletopEnv.handle", () => {
  const env = new TabletopEnv(suite);

  it("describes the suite with task list in order", () => {
    const reply = env.handle({ id: 1, op: "describe" }) as {
      ok: boolean;
      name: string;
      tasks: Array<{ task_id: string }>;
    };
    expect(reply.ok).toBe(true);
    expect(reply.name).toBe("deterministic-tabletop-transfer");
    expect(reply.tasks.map((t) => t.task_id)).toEqual([
      "wipe-table",
      "press-button",
      "tray-plates",
      "needs-offset",
      "firm-grip",
      "wide-bowl",
      "logical-release",
      "tray-cups",
    ]);
  });

  it("builds rollout replies with frames, boundaries, scene, and note", () => {
    const reply = env.handle({
      id: 2,
      op: "rollout",
      task_id: "needs-offset",
      seed: 7,
      skill: { plan: NAIVE_SHELF, programs: NAIVE_SHELF.map((s) => `# ${s}`) },
    }) as Record<string, unknown>;
    expect(reply["ok"]).toBe(true);
    expect(reply["success"]).toBe(0);
    expect(reply["halted_at_step"]).toBe(1);
    expect(reply["step_boundaries"]).toEqual([
      [0, 0, 3],
      [1, 4, 7],
    ]);
    expect(reply["frames"]).toEqual([
      "needs-offset/f000",
      "needs-offset/f001",
      "needs-offset/f002",
      "needs-offset/f003",
      "needs-offset/f004",
      "needs-offset/f005",
      "needs-offset/f006",
      "needs-offset/f007",
    ]);
    expect(String(reply["env_note"])).toContain("marker:collision-shelf; step=1;");
    const scene = reply["scene"] as { objects: Array<{ name: string }> };
    expect(scene.objects.map((o) => o.name)).toEqual(["mug", "shelf"]);
  });

  it("answers unknown ops with a typed error reply", () => {
    expect(env.handle({ id: 9, op: "noop" })).toEqual({
      id: 9,
      ok: false,
      error: "unknown op: 'noop'",
    });
  });

  it("rejects rollouts for unknown tasks", () => {
    const reply = env.handle({ id: 3, op: "rollout", task_id: "nope", seed: 0, skill: { plan: ["x"] } });
    expect(reply).toEqual({ id: 3, ok: false, error: "unknown task_id: 'nope'" });
  });

  it("rejects requests without an integer id", () => {
    expect(env.handle({ op: "reset" })).toEqual({
      id: 0,
      ok: false,
      error: "missing or non-integer id",
    });
  });
});

/**
 * Scripted tabletop semantics and protocol reply construction.
 *
 * Matching is case-insensitive substring matching over plan step text, in
 * three phases: hazards halt execution at the triggering step unless their
 * guard text appears somewhere in the plan; logical rules run after every
 * step executed (grasping while holding, duplicate placements); finally the
 * goal is an ordered list of required step texts. Failures plant the
 * machine-readable note "marker:<marker>; step=<n>; <text>" with step=-1
 * when every step executed.
 *
 * Replies must stay field-identical to the builtin environment of the
 * primary package for every scenario in the shared fixture file.
 */

import { Scenario, ScenarioSuite } from "./scenarios";

export const PROTOCOL_VERSION = 1;

export interface SimOutcome {
  success: boolean;
  haltedAtStep: number | null;
  marker: string;
  note: string;
}

export function simulate(scenario: Scenario, plan: string[]): SimOutcome {
  const lowered = plan.map((step) => step.toLowerCase());

  for (let index = 0; index < lowered.length; index += 1) {
    for (const hazard of scenario.hazards) {
      const guarded = lowered.some((step) => step.includes(hazard.guard));
      if (lowered[index].includes(hazard.trigger) && !guarded) {
        return { success: false, haltedAtStep: index, marker: hazard.marker, note: hazard.note };
      }
    }
  }

  for (const rule of scenario.logicalRules) {
    if (rule.kind === "release_before_grasp") {
      let holding = false;
      for (const step of lowered) {
        if (step.includes("grasp")) {
          if (holding) {
            return { success: false, haltedAtStep: null, marker: rule.marker, note: rule.note };
          }
          holding = true;
        }
        if (step.includes("open gripper")) {
          holding = false;
        }
      }
    } else if (rule.kind === "distinct_steps") {
      const matching = lowered.filter((step) => step.includes(rule.pattern ?? ""));
      if (new Set(matching).size !== matching.length) {
        return { success: false, haltedAtStep: null, marker: rule.marker, note: rule.note };
      }
    } else {
      throw new Error(`unknown logical rule kind '${(rule as LogicalRuleLike).kind}'`);
    }
  }

  let cursor = 0;
  for (const pattern of scenario.goal) {
    let found = -1;
    for (let index = cursor; index < lowered.length; index += 1) {
      if (lowered[index].includes(pattern)) {
        found = index;
        break;
      }
    }
    if (found < 0) {
      return {
        success: false,
        haltedAtStep: null,
        marker: "goal-incomplete",
        note: `required action missing: ${pattern}`,
      };
    }
    cursor = found + 1;
  }

  return { success: true, haltedAtStep: null, marker: "", note: "" };
}

interface LogicalRuleLike {
  kind: string;
}

export function failureNote(outcome: SimOutcome): string {
  const step = outcome.haltedAtStep === null ? -1 : outcome.haltedAtStep;
  return `marker:${outcome.marker}; step=${step}; ${outcome.note}`;
}

export type Reply = Record<string, unknown>;

export function errorReply(id: number, error: string): Reply {
  return { id, ok: false, error };
}

export class TabletopEnv {
  constructor(private readonly suite: ScenarioSuite) {}

  handle(request: Record<string, unknown>): Reply {
    const id = request["id"];
    if (typeof id !== "number" || !Number.isInteger(id)) {
      return errorReply(0, "missing or non-integer id");
    }
    const op = request["op"];
    switch (op) {
      case "describe":
        return {
          id,
          ok: true,
          name: this.suite.name,
          protocol: PROTOCOL_VERSION,
          tasks: this.suite.scenarios.map((s) => ({
            task_id: s.taskId,
            description: s.description,
          })),
        };
      case "reset":
      case "shutdown":
        return { id, ok: true };
      case "rollout":
        return this.rollout(id, request);
      default:
        return errorReply(id, `unknown op: '${String(op)}'`);
    }
  }

  private rollout(id: number, request: Record<string, unknown>): Reply {
    const taskId = request["task_id"];
    const scenario =
      typeof taskId === "string"
        ? this.suite.scenarios.find((s) => s.taskId === taskId)
        : undefined;
    if (!scenario) {
      return errorReply(id, `unknown task_id: '${String(taskId)}'`);
    }
    const skill = request["skill"];
    const planRaw =
      skill && typeof skill === "object" ? (skill as Record<string, unknown>)["plan"] : undefined;
    if (!Array.isArray(planRaw)) {
      return errorReply(id, "rollout request missing skill.plan");
    }
    const plan = planRaw.map((step) => String(step));
    if (plan.length === 0) {
      return errorReply(id, "skill.plan must be non-empty");
    }
    const seed = request["seed"];
    if (typeof seed !== "number" || !Number.isInteger(seed)) {
      return errorReply(id, "rollout request missing integer seed");
    }

    const outcome = simulate(scenario, plan);
    const executed = outcome.haltedAtStep === null ? plan.length : outcome.haltedAtStep + 1;
    const fps = this.suite.framesPerStep;
    const frames: string[] = [];
    for (let index = 0; index < executed * fps; index += 1) {
      frames.push(`${scenario.taskId}/f${String(index).padStart(3, "0")}`);
    }
    const boundaries: number[][] = [];
    for (let i = 0; i < executed; i += 1) {
      boundaries.push([i, i * fps, i * fps + fps - 1]);
    }
    return {
      id,
      ok: true,
      success: outcome.success ? 1 : 0,
      step_boundaries: boundaries,
      frames,
      scene: { objects: scenario.objects.map((obj) => ({ ...obj })) },
      halted_at_step: outcome.haltedAtStep,
      env_note: outcome.success ? "ok" : failureNote(outcome),
    };
  }
}

/**
 * Shared scenario fixture file: the single source of truth for the scripted
 * tabletop semantics, read verbatim from the primary package's data so this
 * adapter can never drift from the builtin environment.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export interface SceneObject {
  name: string;
  position: [number, number, number];
  scale: [number, number, number];
}

export interface Hazard {
  trigger: string;
  guard: string;
  marker: string;
  note: string;
}

export interface LogicalRule {
  kind: "release_before_grasp" | "distinct_steps";
  marker: string;
  note: string;
  pattern?: string;
}

export interface Scenario {
  taskId: string;
  description: string;
  objects: SceneObject[];
  goal: string[];
  hazards: Hazard[];
  logicalRules: LogicalRule[];
}

export interface ScenarioSuite {
  name: string;
  framesPerStep: number;
  scenarios: Scenario[];
}

interface ScenarioFile {
  version: number;
  frames_per_step: number;
  tasks: Record<
    string,
    {
      description: string;
      objects: SceneObject[];
      goal: string[];
      hazards: Hazard[];
      logical_rules: LogicalRule[];
    }
  >;
  suites: Record<string, string[]>;
}

/** Default location when the adapter lives next to the primary package. */
export function defaultScenarioPath(): string {
  return path.resolve(__dirname, "..", "..", "src", "skillloop", "data", "scenarios.json");
}

export function loadSuite(suiteName: string, scenarioPath?: string): ScenarioSuite {
  const source = scenarioPath ?? defaultScenarioPath();
  const doc = JSON.parse(fs.readFileSync(source, "utf-8")) as ScenarioFile;
  const order = doc.suites[suiteName];
  if (!order) {
    const known = Object.keys(doc.suites).join(", ");
    throw new Error(`unknown scenario suite '${suiteName}' in ${source} (known: ${known})`);
  }
  const scenarios = order.map((taskId) => {
    const raw = doc.tasks[taskId];
    if (!raw) {
      throw new Error(`suite '${suiteName}' references unknown task '${taskId}'`);
    }
    return {
      taskId,
      description: raw.description,
      objects: raw.objects,
      goal: raw.goal,
      hazards: raw.hazards,
      logicalRules: raw.logical_rules,
    };
  });
  return { name: suiteName, framesPerStep: doc.frames_per_step, scenarios };
}

/**
 * Worked example: a tiny analytic training loop driven by the scheduler.
 *
 * The "model" is a 2-parameter least-squares fit; three synthetic quadratic
 * objectives stand in for auxiliary datasets. Each turn the scheduler picks
 * an auxiliary, the loop descends on the summed gradients and reports the
 * observed loss plus the local gradient summary. Everything is analytic and
 * deterministic given the seed, so the run doubles as a conformance
 * fixture: the session log can be replayed against the in-process policy.
 *
 * Usage: node dist/example.js [--seed N] [--log FILE] [--server "CMD ..."]
 */

import { writeFileSync } from "node:fs";

import { SchedulerClient } from "./client.js";
import { GradSummary, summarizeGradients } from "./messages.js";

const HORIZON = 100;
const BETA = 0.2;
const LEARNING_RATE = 0.1;
const NUM_AUX = 3;

// least-squares target: four points, true parameters [1.5, -0.5]
const X: number[][] = [
  [1, 0],
  [0, 1],
  [1, 1],
  [1, -1],
];
const TRUE_THETA = [1.5, -0.5];
const Y = X.map((row) => row[0] * TRUE_THETA[0] + row[1] * TRUE_THETA[1]);

function targetLoss(theta: number[]): number {
  let total = 0;
  for (let i = 0; i < X.length; i++) {
    const r = X[i][0] * theta[0] + X[i][1] * theta[1] - Y[i];
    total += r * r;
  }
  return total / (2 * X.length);
}

function targetGradient(theta: number[]): number[] {
  const g = [0, 0];
  for (let i = 0; i < X.length; i++) {
    const r = X[i][0] * theta[0] + X[i][1] * theta[1] - Y[i];
    g[0] += (r * X[i][0]) / X.length;
    g[1] += (r * X[i][1]) / X.length;
  }
  return g;
}

interface AuxTask {
  center: number[];
  curvature: number;
}

function auxLoss(task: AuxTask, theta: number[]): number {
  const dx = theta[0] - task.center[0];
  const dy = theta[1] - task.center[1];
  return 0.5 * task.curvature * (dx * dx + dy * dy);
}

function auxGradient(task: AuxTask, theta: number[]): number[] {
  return [
    task.curvature * (theta[0] - task.center[0]),
    task.curvature * (theta[1] - task.center[1]),
  ];
}

// small multiplicative-congruential generator: deterministic cross-platform
function lcg(seed: number): () => number {
  let state = (seed >>> 0) || 1;
  return () => {
    state = (state * 48271) % 2147483647;
    return state / 2147483647;
  };
}

function makeAuxPool(seed: number): AuxTask[] {
  const rand = lcg(seed);
  const pool: AuxTask[] = [];
  // one center near the true parameters, the rest scattered
  pool.push({ center: [TRUE_THETA[0] + 0.2, TRUE_THETA[1] - 0.1], curvature: 1.0 });
  for (let j = 1; j < NUM_AUX; j++) {
    pool.push({
      center: [4 * rand() - 2 - TRUE_THETA[0], 4 * rand() - 2 - TRUE_THETA[1]],
      curvature: 0.5 + rand(),
    });
  }
  return pool;
}

interface SessionLog {
  num_arms: number;
  horizon: number;
  beta: number;
  alpha_schedule: { kind: string; alpha0: number; alpha_min: number; decay: number };
  probes: Array<{ arm: number; loss: number } & GradSummary>;
  turns: Array<{ turn: number; arm: number; loss: number } & GradSummary>;
  selections: number[];
  final_target_loss: number;
}

export async function runExample(
  seed: number,
  serverCommand: string,
  logPath?: string,
): Promise<SessionLog> {
  const pool = makeAuxPool(seed);
  let theta = [0, 0];

  const client = await SchedulerClient.spawn(serverCommand, {
    numArms: NUM_AUX,
    horizon: HORIZON,
    beta: BETA,
  });

  const log: SessionLog = {
    num_arms: NUM_AUX,
    horizon: HORIZON,
    beta: client.beta,
    alpha_schedule: client.alphaSchedule!,
    probes: [],
    turns: [],
    selections: [],
    final_target_loss: NaN,
  };

  // probe every arm once at the starting parameters
  const g0 = targetGradient(theta);
  for (let arm = 0; arm < NUM_AUX; arm++) {
    const loss = auxLoss(pool[arm], theta);
    const summary = summarizeGradients(auxGradient(pool[arm], theta), g0);
    await client.probe(arm, loss, summary);
    log.probes.push({ arm, loss, ...summary });
  }

  for (let t = 1; t <= HORIZON; t++) {
    const { arm } = await client.select();
    // With a real framework, this is where the chosen auxiliary batch and
    // the target batch would each run forward/backward; the flattened
    // gradients reduce to the same three numbers reported below.
    const gTarget = targetGradient(theta);
    const gAux = auxGradient(pool[arm], theta);
    const loss = auxLoss(pool[arm], theta);
    const summary = summarizeGradients(gAux, gTarget);
    theta = [
      theta[0] - LEARNING_RATE * (gTarget[0] + gAux[0]),
      theta[1] - LEARNING_RATE * (gTarget[1] + gAux[1]),
    ];
    await client.report(loss, summary);
    log.turns.push({ turn: t, arm, loss, ...summary });
    log.selections.push(arm);
  }
  await client.shutdown();

  log.final_target_loss = targetLoss(theta);
  if (logPath) {
    writeFileSync(logPath, JSON.stringify(log, null, 2) + "\n");
  }
  return log;
}

function parseArgs(argv: string[]): { seed: number; log?: string; server: string } {
  const out = { seed: 7, log: undefined as string | undefined,
                server: "python3 -m asap serve --stdio" };
  for (let i = 2; i < argv.length; i++) {
    if (argv[i] === "--seed") out.seed = Number(argv[++i]);
    else if (argv[i] === "--log") out.log = argv[++i];
    else if (argv[i] === "--server") out.server = argv[++i];
    else throw new Error(`unknown argument ${argv[i]}`);
  }
  return out;
}

const isMain = process.argv[1] && import.meta.url.endsWith(
  process.argv[1].split("/").pop() ?? "",
);

if (isMain) {
  const args = parseArgs(process.argv);
  runExample(args.seed, args.server, args.log)
    .then((log) => {
      const counts = new Map<number, number>();
      for (const arm of log.selections) counts.set(arm, (counts.get(arm) ?? 0) + 1);
      const summary = [...counts.entries()]
        .sort((a, b) => a[0] - b[0])
        .map(([arm, n]) => `arm ${arm}: ${n}`)
        .join(", ");
      console.log(`selections over ${log.horizon} turns: ${summary}`);
      console.log(`final target loss: ${log.final_target_loss}`);
    })
    .catch((err) => {
      console.error(err);
      process.exitCode = 1;
    });
}

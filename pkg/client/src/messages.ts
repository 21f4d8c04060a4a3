/**
 * Wire messages for the asap/1 scheduler protocol.
 *
 * One JSON object per line, compact encoding, fields in the documented
 * order. The client ships only losses and three-number gradient summaries;
 * model parameters never cross the boundary.
 */

export const PROTOCOL_VERSION = "asap/1";

export interface GradSummary {
  dot: number;
  norm_aux: number;
  norm_target: number;
}

export interface AlphaSchedule {
  kind: "linear" | "exponential" | "constant";
  alpha0: number;
  alpha_min: number;
  decay: number;
}

export interface HelloReply {
  type: "hello";
  protocol: string;
  num_arms: number;
  horizon: number;
  beta: number;
  alpha_schedule: AlphaSchedule;
  pm_eval: "pre_update" | "post_update";
  normalization: "raw" | "running_minmax";
}

export interface SelectedReply {
  type: "selected";
  turn: number;
  arm: number;
  ucb_scores: number[];
}

export interface AckReply {
  type: "ack";
  turn: number;
  estimate_after: number;
}

export interface ErrorReply {
  type: "error";
  code: "decode" | "protocol" | "config" | "reward_domain";
  message: string;
}

export type ServerMessage =
  | HelloReply
  | SelectedReply
  | AckReply
  | ErrorReply
  | { type: "shutdown" };

/** Field order is part of the documented grammar; keep literals in order. */
export function encodeHello(
  numArms: number,
  horizon: number,
  beta?: number,
  schedule?: Partial<AlphaSchedule>,
  protocolVersion: string = PROTOCOL_VERSION,
): string {
  const msg: Record<string, unknown> = {
    type: "hello",
    protocol: protocolVersion,
    num_arms: numArms,
    horizon: horizon,
  };
  if (beta !== undefined) msg.beta = beta;
  if (schedule !== undefined) msg.alpha_schedule = schedule;
  return JSON.stringify(msg);
}

export function encodeInitProbe(arm: number, lossAux: number, g: GradSummary): string {
  return JSON.stringify({
    type: "init_probe",
    arm,
    loss_aux: lossAux,
    grad_summary: { dot: g.dot, norm_aux: g.norm_aux, norm_target: g.norm_target },
  });
}

export function encodeSelectRequest(turn: number): string {
  return JSON.stringify({ type: "select_request", turn });
}

export function encodeReport(
  turn: number,
  arm: number,
  lossAux: number,
  g: GradSummary,
  lossAuxPost?: number,
): string {
  const msg: Record<string, unknown> = {
    type: "report",
    turn,
    arm,
    loss_aux: lossAux,
    grad_summary: { dot: g.dot, norm_aux: g.norm_aux, norm_target: g.norm_target },
  };
  if (lossAuxPost !== undefined) msg.loss_aux_post = lossAuxPost;
  return JSON.stringify(msg);
}

export function encodeShutdown(): string {
  return JSON.stringify({ type: "shutdown" });
}

export function decodeServerMessage(line: string): ServerMessage {
  let parsed: unknown;
  try {
    parsed = JSON.parse(line);
  } catch (err) {
    throw new Error(`server sent an unparseable line: ${line}`);
  }
  if (typeof parsed !== "object" || parsed === null || !("type" in parsed)) {
    throw new Error(`server message has no type: ${line}`);
  }
  return parsed as ServerMessage;
}

/**
 * Reduce two same-length flat gradients to the wire summary. Structured
 * parameters must be flattened in registration order before this call so
 * the statistics match what an in-process evaluation would produce.
 */
export function summarizeGradients(gradAux: number[], gradTarget: number[]): GradSummary {
  if (gradAux.length !== gradTarget.length || gradAux.length === 0) {
    throw new Error(
      `gradient length mismatch: ${gradAux.length} vs ${gradTarget.length}`,
    );
  }
  let dot = 0;
  let na = 0;
  let nt = 0;
  for (let i = 0; i < gradAux.length; i++) {
    dot += gradAux[i] * gradTarget[i];
    na += gradAux[i] * gradAux[i];
    nt += gradTarget[i] * gradTarget[i];
  }
  return { dot, norm_aux: Math.sqrt(na), norm_target: Math.sqrt(nt) };
}

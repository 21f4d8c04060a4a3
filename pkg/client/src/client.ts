/**
 * Reference client for the asap/1 scheduler sidecar.
 *
 * A training loop calls three hooks per step: select() to learn which
 * auxiliary dataset to train on, then report() with the observed loss and
 * gradient summary; probe() seeds every arm once before the first turn.
 * The client mirrors the server's phase machine and fails fast on
 * out-of-order use, so protocol bugs surface at the call site instead of
 * as server errors mid-run.
 */

import { spawn, ChildProcessByStdio } from "node:child_process";
import { Socket, createConnection } from "node:net";
import { createInterface, Interface } from "node:readline";
import type { Readable, Writable } from "node:stream";

import {
  AckReply,
  AlphaSchedule,
  ErrorReply,
  GradSummary,
  HelloReply,
  PROTOCOL_VERSION,
  SelectedReply,
  ServerMessage,
  decodeServerMessage,
  encodeHello,
  encodeInitProbe,
  encodeReport,
  encodeSelectRequest,
  encodeShutdown,
} from "./messages.js";

export class ServerError extends Error {
  constructor(public code: string, message: string) {
    super(message);
    this.name = "ServerError";
  }
}

export class PhaseError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "PhaseError";
  }
}

type Phase = "awaiting_hello" | "probing" | "serving" | "closed";

/** Line-based transport; satisfied by a child process or a test double. */
export interface Transport {
  send(line: string): void;
  onLine(handler: (line: string) => void): void;
  close(): void;
}

class SubprocessTransport implements Transport {
  private child: ChildProcessByStdio<Writable, Readable, null>;
  private reader: Interface;

  constructor(command: string, args: string[]) {
    this.child = spawn(command, args, { stdio: ["pipe", "pipe", "inherit"] });
    this.reader = createInterface({ input: this.child.stdout });
  }

  send(line: string): void {
    this.child.stdin.write(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.reader.on("line", handler);
  }

  close(): void {
    this.child.stdin.end();
  }
}

class TcpTransport implements Transport {
  private reader: Interface;

  constructor(private socket: Socket) {
    this.reader = createInterface({ input: socket });
  }

  static connect(host: string, port: number): Promise<TcpTransport> {
    return new Promise((resolve, reject) => {
      const socket = createConnection({ host, port }, () =>
        resolve(new TcpTransport(socket)),
      );
      socket.on("error", reject);
    });
  }

  send(line: string): void {
    this.socket.write(line + "\n");
  }

  onLine(handler: (line: string) => void): void {
    this.reader.on("line", handler);
  }

  close(): void {
    this.socket.end();
  }
}

export interface ConnectOptions {
  numArms: number;
  horizon: number;
  beta?: number;
  alphaSchedule?: Partial<AlphaSchedule>;
  /** Override only to exercise version negotiation in tests. */
  protocolVersion?: string;
}

export class SchedulerClient {
  readonly numArms: number;
  readonly horizon: number;
  /** Effective settings echoed by the server's hello. */
  beta = 0;
  alphaSchedule: AlphaSchedule | null = null;
  pmEval: "pre_update" | "post_update" = "pre_update";

  private phase: Phase = "awaiting_hello";
  private probesDone = 0;
  private currentTurn = 0;
  private lastSelected: number | null = null;
  private awaitingReport = false;
  private pending: Array<{
    resolve: (msg: ServerMessage) => void;
    reject: (err: Error) => void;
  }> = [];

  private constructor(private transport: Transport, options: ConnectOptions) {
    this.numArms = options.numArms;
    this.horizon = options.horizon;
    transport.onLine((line) => this.dispatch(line));
  }

  /** Spawn a server subprocess ("cmd arg arg...") and complete the hello. */
  static async spawn(serverCommand: string, options: ConnectOptions): Promise<SchedulerClient> {
    const [command, ...args] = serverCommand.split(/\s+/);
    return SchedulerClient.connect(new SubprocessTransport(command, args), options);
  }

  /** Connect to a listening server over TCP and complete the hello. */
  static async connectTcp(
    host: string,
    port: number,
    options: ConnectOptions,
  ): Promise<SchedulerClient> {
    return SchedulerClient.connect(await TcpTransport.connect(host, port), options);
  }

  static async connect(transport: Transport, options: ConnectOptions): Promise<SchedulerClient> {
    const client = new SchedulerClient(transport, options);
    const reply = await client.roundTrip(
      encodeHello(
        options.numArms,
        options.horizon,
        options.beta,
        options.alphaSchedule,
        options.protocolVersion ?? PROTOCOL_VERSION,
      ),
    );
    if (reply.type !== "hello") {
      throw new PhaseError(`expected hello reply, got ${reply.type}`);
    }
    const hello = reply as HelloReply;
    client.beta = hello.beta;
    client.alphaSchedule = hello.alpha_schedule;
    client.pmEval = hello.pm_eval;
    client.phase = "probing";
    return client;
  }

  private dispatch(line: string): void {
    const waiter = this.pending.shift();
    if (!waiter) return; // unsolicited line after close; ignore
    let msg: ServerMessage;
    try {
      msg = decodeServerMessage(line);
    } catch (err) {
      waiter.reject(err as Error);
      return;
    }
    if (msg.type === "error") {
      const e = msg as ErrorReply;
      this.phase = "closed";
      waiter.reject(new ServerError(e.code, e.message));
      return;
    }
    waiter.resolve(msg);
  }

  private roundTrip(line: string): Promise<ServerMessage> {
    return new Promise((resolve, reject) => {
      this.pending.push({ resolve, reject });
      this.transport.send(line);
    });
  }

  private requirePhase(expected: Phase, what: string): void {
    if (this.phase !== expected) {
      throw new PhaseError(`${what} is not valid in phase ${this.phase}`);
    }
  }

  /** Seed one arm's estimate; must be called for arms 0..numArms-1 in order. */
  async probe(arm: number, loss: number, g: GradSummary): Promise<number> {
    this.requirePhase("probing", "probe");
    if (arm !== this.probesDone) {
      throw new PhaseError(`probe arms must go in order; expected ${this.probesDone}`);
    }
    const reply = (await this.roundTrip(encodeInitProbe(arm, loss, g))) as AckReply;
    this.probesDone += 1;
    if (this.probesDone === this.numArms) this.phase = "serving";
    return reply.estimate_after;
  }

  /** Ask which auxiliary dataset to train on this turn. */
  async select(): Promise<{ turn: number; arm: number; ucbScores: number[] }> {
    this.requirePhase("serving", "select");
    if (this.awaitingReport) {
      throw new PhaseError(`turn ${this.currentTurn} still awaits its report`);
    }
    const turn = this.currentTurn + 1;
    const reply = (await this.roundTrip(encodeSelectRequest(turn))) as SelectedReply;
    this.currentTurn = turn;
    this.lastSelected = reply.arm;
    this.awaitingReport = true;
    return { turn: reply.turn, arm: reply.arm, ucbScores: reply.ucb_scores };
  }

  /** Report the pulled arm's loss and gradient summary; returns new estimate. */
  async report(loss: number, g: GradSummary, lossPost?: number): Promise<number> {
    this.requirePhase("serving", "report");
    if (!this.awaitingReport || this.lastSelected === null) {
      throw new PhaseError("report without a preceding select");
    }
    const reply = (await this.roundTrip(
      encodeReport(this.currentTurn, this.lastSelected, loss, g, lossPost),
    )) as AckReply;
    this.awaitingReport = false;
    this.lastSelected = null;
    return reply.estimate_after;
  }

  async shutdown(): Promise<void> {
    if (this.phase === "closed") return;
    await this.roundTrip(encodeShutdown());
    this.phase = "closed";
    this.transport.close();
  }
}

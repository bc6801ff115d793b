// Profiler charts: bar charts per agent for messages, cost, and tool
// outcomes. Chart rows are a pure projection of the /profile payload, so the
// rendered values can be compared 1:1 against the endpoint.

import type { ProfileReport } from "./types.js";

export interface AgentChartRow {
  agent: string;
  messages: number;
  cost: number;
  tool_success: number;
  tool_failure: number;
}

export function chartRows(report: ProfileReport): AgentChartRow[] {
  return Object.keys(report.per_agent)
    .sort()
    .map((agent) => ({
      agent,
      messages: report.per_agent[agent].messages,
      cost: report.per_agent[agent].cost,
      tool_success: report.per_agent[agent].tool_success,
      tool_failure: report.per_agent[agent].tool_failure,
    }));
}

export type ChartMetric = "messages" | "cost" | "tool_success" | "tool_failure";

const BAR_WIDTH = 34;
const GAP = 14;
const HEIGHT = 120;
const LABEL_SPACE = 30;

export function barChartSvg(rows: AgentChartRow[], metric: ChartMetric): string {
  const values = rows.map((r) => r[metric]);
  const max = Math.max(...values, 0);
  const width = Math.max(rows.length * (BAR_WIDTH + GAP) + GAP, 80);
  const bars = rows
    .map((row, i) => {
      const value = row[metric];
      const h = max > 0 ? Math.round((value / max) * (HEIGHT - 10)) : 0;
      const x = GAP + i * (BAR_WIDTH + GAP);
      const y = HEIGHT - h;
      const label = metric === "cost" ? value.toFixed(4) : String(value);
      return (
        `<rect class="bar" data-agent="${row.agent}" data-value="${value}" ` +
        `x="${x}" y="${y}" width="${BAR_WIDTH}" height="${h}"></rect>` +
        `<text class="bar-value" x="${x + BAR_WIDTH / 2}" y="${y - 2}" text-anchor="middle">${label}</text>` +
        `<text class="bar-label" x="${x + BAR_WIDTH / 2}" y="${HEIGHT + 14}" text-anchor="middle">${row.agent}</text>`
      );
    })
    .join("");
  return (
    `<svg class="chart" viewBox="0 0 ${width} ${HEIGHT + LABEL_SPACE}" ` +
    `width="${width}" height="${HEIGHT + LABEL_SPACE}" role="img" aria-label="${metric} per agent">` +
    `${bars}</svg>`
  );
}

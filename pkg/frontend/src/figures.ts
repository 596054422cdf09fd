import { loadCsv, num, Row, SchemaError } from './csv';
import {
  COVER_COLOR, HEIGHT, MARGIN, NATIVE_COLOR, Svg, WIDTH, fmt, linearScale,
  ticks,
} from './svg';

export type FigureKind = 'rank_vs_popularity' | 'rank_compare' | 'traffic_pattern';

export interface FigureSpec {
  kind: FigureKind;
  input: string;
  output: string;
  view: string;
}

interface Band {
  x: number;
  mean: number;
  std: number;
}

function plotRange() {
  return {
    x0: MARGIN.left,
    x1: WIDTH - MARGIN.right,
    y0: HEIGHT - MARGIN.bottom,
    y1: MARGIN.top,
  };
}

function requireRows(rows: Row[], what: string): void {
  if (rows.length === 0) {
    throw new SchemaError(`no rows: ${what}`);
  }
}

/** Mean start/end rank of native interests against torrent popularity. */
export function renderRankVsPopularity(spec: FigureSpec): string {
  const metric = spec.view === 'end' ? 'end' : 'start';
  const rows = loadCsv(spec.input,
    ['metric', 'grouping', 'group', 'population', 'mean', 'std', 'n']);
  const wanted = rows.filter(r => r.metric === metric
    && r.grouping === 'popularity' && r.population === 'native');
  requireRows(wanted, `no ${metric}/popularity/native rows in ${spec.input}`);
  const points: Band[] = wanted
    .map(r => ({ x: num(r, 'group'), mean: num(r, 'mean'), std: num(r, 'std') }))
    .sort((a, b) => a.x - b.x);
  const { x0, x1, y0, y1 } = plotRange();
  const xMax = Math.max(...points.map(p => p.x));
  const yMax = Math.max(...points.map(p => p.mean + p.std), 1);
  const xs = linearScale(0, xMax + 1, x0, x1);
  const ys = linearScale(0, yMax * 1.1, y0, y1);
  const svg = new Svg(`Native ${metric} rank vs popularity`);
  svg.axes(xs, ys, 'natively interested clients', `${metric} rank`,
    ticks(0, xMax + 1), ticks(0, yMax * 1.1));
  for (const p of points) {
    const px = xs(p.x);
    svg.errorBar(px, ys(p.mean), Math.abs(ys(p.mean - p.std) - ys(p.mean)), NATIVE_COLOR);
    svg.circle(px, ys(p.mean), 3.5, NATIVE_COLOR);
  }
  return svg.render();
}

/** Per-torrent native vs cover rank means with one-stddev bars. */
export function renderRankCompare(spec: FigureSpec): string {
  const metric = spec.view === 'end' ? 'end' : 'start';
  const rows = loadCsv(spec.input,
    ['metric', 'grouping', 'group', 'population', 'mean', 'std', 'n']);
  const wanted = rows.filter(r => r.metric === metric && r.grouping === 'torrent');
  requireRows(wanted, `no ${metric}/torrent rows in ${spec.input}`);
  const byTorrent = new Map<number, { native?: Band; cover?: Band }>();
  for (const r of wanted) {
    const t = num(r, 'group');
    const entry = byTorrent.get(t) ?? {};
    const band = { x: t, mean: num(r, 'mean'), std: num(r, 'std') };
    if (r.population === 'native') entry.native = band;
    if (r.population === 'cover') entry.cover = band;
    byTorrent.set(t, entry);
  }
  const torrents = [...byTorrent.keys()].sort((a, b) => a - b);
  const { x0, x1, y0, y1 } = plotRange();
  let yMax = 1;
  for (const { native, cover } of byTorrent.values()) {
    for (const band of [native, cover]) {
      if (band) yMax = Math.max(yMax, band.mean + band.std);
    }
  }
  const xs = linearScale(Math.min(...torrents), Math.max(...torrents) + 1, x0, x1);
  const ys = linearScale(0, yMax * 1.1, y0, y1);
  const svg = new Svg(`Native vs cover ${metric} ranks by torrent`);
  svg.axes(xs, ys, 'torrent', `${metric} rank`,
    ticks(Math.min(...torrents), Math.max(...torrents) + 1), ticks(0, yMax * 1.1));
  for (const t of torrents) {
    const { native, cover } = byTorrent.get(t)!;
    if (cover) {
      const px = xs(t) + 3;
      svg.errorBar(px, ys(cover.mean), Math.abs(ys(cover.mean - cover.std) - ys(cover.mean)), COVER_COLOR, 3);
      svg.circle(px, ys(cover.mean), 2.5, COVER_COLOR);
    }
    if (native) {
      const px = xs(t) - 3;
      svg.errorBar(px, ys(native.mean), Math.abs(ys(native.mean - native.std) - ys(native.mean)), NATIVE_COLOR, 3);
      svg.circle(px, ys(native.mean), 2.5, NATIVE_COLOR);
    }
  }
  svg.legend([['native', NATIVE_COLOR], ['cover', COVER_COLOR]]);
  return svg.render();
}

/** Superimposed native and cover download volumes per time slice. */
export function renderTrafficPattern(spec: FigureSpec): string {
  const view = spec.view === 'client' ? 'per_client_observed' : 'global';
  const rows = loadCsv(spec.input,
    ['view', 'slice', 'population', 'mean_bytes', 'std_bytes']);
  const wanted = rows.filter(r => r.view === view);
  requireRows(wanted, `no ${view} rows in ${spec.input}`);
  const series = new Map<string, Band[]>([['native', []], ['cover', []]]);
  for (const r of wanted) {
    const list = series.get(r.population);
    if (list === undefined) continue;
    list.push({ x: num(r, 'slice'), mean: num(r, 'mean_bytes'), std: num(r, 'std_bytes') });
  }
  for (const list of series.values()) list.sort((a, b) => a.x - b.x);
  const native = series.get('native')!;
  const cover = series.get('cover')!;
  requireRows(native.length && cover.length ? wanted : [],
    `need native and cover populations in ${spec.input}`);
  const { x0, x1, y0, y1 } = plotRange();
  const xMax = Math.max(...native.map(p => p.x), ...cover.map(p => p.x));
  const yMax = Math.max(...native.map(p => p.mean + p.std),
    ...cover.map(p => p.mean + p.std), 1);
  const xs = linearScale(0, Math.max(xMax, 1), x0, x1);
  const ys = linearScale(0, yMax * 1.1, y0, y1);
  const label = view === 'global' ? 'global view' : 'single-client view';
  const svg = new Svg(`Download patterns, ${label}`);
  svg.axes(xs, ys, 'time slice', 'bytes per torrent slot',
    ticks(0, Math.max(xMax, 1)), ticks(0, yMax * 1.1),
    v => fmt(Math.round(v)), v => fmt(Math.round(v)));
  for (const [name, list, color] of [
    ['cover', cover, COVER_COLOR],
    ['native', native, NATIVE_COLOR],
  ] as Array<[string, Band[], string]>) {
    if (list.length > 1) {
      const upper = list.map(p => [xs(p.x), ys(p.mean + p.std)] as [number, number]);
      const lower = [...list].reverse()
        .map(p => [xs(p.x), ys(Math.max(0, p.mean - p.std))] as [number, number]);
      svg.polygon([...upper, ...lower], color, 0.18);
    } else {
      const p = list[0];
      svg.errorBar(xs(p.x), ys(p.mean), Math.abs(ys(p.mean - p.std) - ys(p.mean)), color);
    }
    svg.polyline(list.map(p => [xs(p.x), ys(p.mean)]), color, 2);
    for (const p of list) svg.circle(xs(p.x), ys(p.mean), 2.5, color);
  }
  svg.legend([['native', NATIVE_COLOR], ['cover', COVER_COLOR]]);
  return svg.render();
}

export function render(spec: FigureSpec): string {
  switch (spec.kind) {
    case 'rank_vs_popularity':
      return renderRankVsPopularity(spec);
    case 'rank_compare':
      return renderRankCompare(spec);
    case 'traffic_pattern':
      return renderTrafficPattern(spec);
    default:
      throw new SchemaError(`unknown figure kind: ${(spec as FigureSpec).kind}`);
  }
}

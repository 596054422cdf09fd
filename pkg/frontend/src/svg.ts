// Minimal deterministic SVG scene building: fixed canvas, no timestamps,
// numbers printed with fixed precision so identical input gives identical
// bytes.

export const WIDTH = 640;
export const HEIGHT = 420;
export const MARGIN = { top: 36, right: 24, bottom: 52, left: 64 };

export const NATIVE_COLOR = '#c0392b';
export const COVER_COLOR = '#2a6f97';

export function fmt(value: number): string {
  if (!Number.isFinite(value)) return '0';
  const rounded = Number(value.toPrecision(6));
  return Object.is(rounded, -0) ? '0' : String(rounded);
}

export interface Scale {
  (value: number): number;
  min: number;
  max: number;
}

export function linearScale(min: number, max: number, rangeMin: number, rangeMax: number): Scale {
  const span = max - min || 1;
  const scale = ((value: number) =>
    rangeMin + ((value - min) / span) * (rangeMax - rangeMin)) as Scale;
  scale.min = min;
  scale.max = max;
  return scale;
}

export function ticks(min: number, max: number, count = 5): number[] {
  const span = max - min || 1;
  const step = span / (count - 1);
  const out: number[] = [];
  for (let i = 0; i < count; i++) out.push(min + i * step);
  return out;
}

export class Svg {
  private parts: string[] = [];

  constructor(title: string) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="Helvetica, Arial, sans-serif">`,
      `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>`,
      `<text x="${WIDTH / 2}" y="22" text-anchor="middle" font-size="15">${escapeXml(title)}</text>`,
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1) {
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  circle(cx: number, cy: number, r: number, fill: string) {
    this.parts.push(`<circle cx="${fmt(cx)}" cy="${fmt(cy)}" r="${r}" fill="${fill}"/>`);
  }

  polyline(points: Array<[number, number]>, stroke: string, width = 1.5) {
    const path = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(' ');
    this.parts.push(
      `<polyline points="${path}" fill="none" stroke="${stroke}" stroke-width="${width}"/>`,
    );
  }

  polygon(points: Array<[number, number]>, fill: string, opacity: number) {
    const path = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(' ');
    this.parts.push(`<polygon points="${path}" fill="${fill}" fill-opacity="${opacity}"/>`);
  }

  text(x: number, y: number, content: string, size = 11, anchor = 'middle', extra = '') {
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" text-anchor="${anchor}" font-size="${size}"${extra}>${escapeXml(content)}</text>`,
    );
  }

  errorBar(x: number, yc: number, half: number, color: string, cap = 4) {
    this.line(x, yc - half, x, yc + half, color, 1.2);
    this.line(x - cap, yc - half, x + cap, yc - half, color, 1.2);
    this.line(x - cap, yc + half, x + cap, yc + half, color, 1.2);
  }

  axes(xScale: Scale, yScale: Scale, xLabel: string, yLabel: string,
       xTicks: number[], yTicks: number[], xFormat: (v: number) => string = fmt,
       yFormat: (v: number) => string = fmt) {
    const x0 = MARGIN.left;
    const x1 = WIDTH - MARGIN.right;
    const y0 = HEIGHT - MARGIN.bottom;
    const y1 = MARGIN.top;
    this.line(x0, y0, x1, y0, '#333');
    this.line(x0, y0, x0, y1, '#333');
    for (const t of xTicks) {
      const px = xScale(t);
      this.line(px, y0, px, y0 + 4, '#333');
      this.text(px, y0 + 18, xFormat(t));
    }
    for (const t of yTicks) {
      const py = yScale(t);
      this.line(x0 - 4, py, x0, py, '#333');
      this.text(x0 - 8, py + 4, yFormat(t), 11, 'end');
    }
    this.text((x0 + x1) / 2, HEIGHT - 12, xLabel, 12);
    this.text(16, (y0 + y1) / 2, yLabel, 12, 'middle',
      ` transform="rotate(-90 16 ${fmt((y0 + y1) / 2)})"`);
  }

  legend(entries: Array<[string, string]>) {
    let y = MARGIN.top + 8;
    const x = WIDTH - MARGIN.right - 130;
    for (const [label, color] of entries) {
      this.line(x, y, x + 22, y, color, 3);
      this.text(x + 28, y + 4, label, 11, 'start');
      y += 18;
    }
  }

  render(): string {
    return this.parts.join('\n') + '\n</svg>\n';
  }
}

function escapeXml(value: string): string {
  return value
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

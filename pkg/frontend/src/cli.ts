#!/usr/bin/env node
import { writeFileSync } from 'fs';
import { parseArgs } from 'util';

import { SchemaError } from './csv';
import { FigureKind, FigureSpec, render } from './figures';

const KINDS: FigureKind[] = ['rank_vs_popularity', 'rank_compare', 'traffic_pattern'];

export function main(argv: string[]): number {
  let values;
  try {
    ({ values } = parseArgs({
      args: argv,
      options: {
        kind: { type: 'string' },
        in: { type: 'string' },
        out: { type: 'string' },
        view: { type: 'string', default: '' },
      },
    }));
  } catch (err) {
    console.error(`usage error: ${(err as Error).message}`);
    return 2;
  }
  const kind = values.kind as FigureKind | undefined;
  if (!kind || !KINDS.includes(kind) || !values.in || !values.out) {
    console.error(
      'usage: render --kind rank_vs_popularity|rank_compare|traffic_pattern '
      + '--in CSV --out IMG [--view start|end|global|client]');
    return 2;
  }
  const spec: FigureSpec = {
    kind,
    input: values.in,
    output: values.out,
    view: values.view ?? '',
  };
  try {
    writeFileSync(spec.output, render(spec));
  } catch (err) {
    if (err instanceof SchemaError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
  return 0;
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}

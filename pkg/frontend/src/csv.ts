import { readFileSync } from 'fs';
import Papa from 'papaparse';

export class SchemaError extends Error {}

export type Row = Record<string, string>;

/**
 * Load a CSV and verify the columns a figure consumes are all present.
 * Values stay as strings; numeric parsing happens at point of use so a bad
 * cell fails loudly with its column name.
 */
export function loadCsv(path: string, requiredColumns: string[]): Row[] {
  const text = readFileSync(path, 'utf8');
  const parsed = Papa.parse<Row>(text.trim(), {
    header: true,
    skipEmptyLines: true,
  });
  if (parsed.errors.length > 0) {
    const first = parsed.errors[0];
    throw new SchemaError(`cannot parse ${path}: ${first.message}`);
  }
  const fields = parsed.meta.fields ?? [];
  for (const column of requiredColumns) {
    if (!fields.includes(column)) {
      throw new SchemaError(`missing column: ${column}`);
    }
  }
  return parsed.data;
}

export function num(row: Row, column: string): number {
  const raw = row[column];
  const value = Number(raw);
  if (raw === undefined || raw === '' || Number.isNaN(value)) {
    throw new SchemaError(`bad numeric value in column ${column}: "${raw}"`);
  }
  return value;
}

export { parseCsv, requireColumns, SchemaError } from "./csv.js";
export { buildNmseOption, buildSeOption, buildMapOption } from "./options.js";
export { buildOption, renderSvg, renderToFile, KINDS } from "./render.js";

export { BoundaryError, CliError, FormatError } from "./errors.js";
export {
  readCloud,
  writeCloud,
  parseLabels,
  formatLabels,
  parseAugmentReport,
} from "./format.js";
export type { BoxLabel, ReportRow, AugmentReportData } from "./format.js";
export { boundAugment } from "./augment.js";
export type { AugmentOptions, AugmentResult } from "./augment.js";
export {
  cosineSimilarity,
  studentRelationMatrix,
  teacherRelationMatrix,
  relationLoss,
  weightedRelationLoss,
  totalLoss,
  relationLossGradient,
} from "./relation.js";
export type { RelationOptions, RelationResult } from "./relation.js";

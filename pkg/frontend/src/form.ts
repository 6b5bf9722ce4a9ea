import { METRICS, type Metric, type RatingPayload, type Score } from './types.js'

/**
 * Rating form state. This is the single gate between the widgets and the
 * network payload: scores are validated on entry, and a payload can only be
 * produced once every metric has a selection, so a partial or out-of-range
 * submission is impossible by construction.
 */
export class RatingForm {
  private selections = new Map<Metric, Score>()

  select(metric: string, score: number): void {
    if (!(METRICS as readonly string[]).includes(metric)) {
      throw new RangeError(`unknown metric: ${metric}`)
    }
    if (!Number.isInteger(score) || score < 1 || score > 5) {
      throw new RangeError(`score for ${metric} must be an integer in [1, 5], got ${score}`)
    }
    this.selections.set(metric as Metric, score as Score)
  }

  get(metric: Metric): Score | undefined {
    return this.selections.get(metric)
  }

  missing(): Metric[] {
    return METRICS.filter((m) => !this.selections.has(m))
  }

  isComplete(): boolean {
    return this.missing().length === 0
  }

  toPayload(itemId: string, annotatorId: string): RatingPayload {
    const missing = this.missing()
    if (missing.length > 0) {
      throw new Error(`cannot submit: unselected metrics: ${missing.join(', ')}`)
    }
    const scores = {} as Record<Metric, Score>
    for (const metric of METRICS) {
      scores[metric] = this.selections.get(metric) as Score
    }
    return { item_id: itemId, annotator_id: annotatorId, scores }
  }

  reset(): void {
    this.selections.clear()
  }
}

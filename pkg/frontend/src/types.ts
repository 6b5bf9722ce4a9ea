export const METRICS = [
  'informativeness',
  'clarity',
  'plausibility',
  'faithfulness',
] as const

export type Metric = (typeof METRICS)[number]

export type Score = 1 | 2 | 3 | 4 | 5

export const SCORES: readonly Score[] = [1, 2, 3, 4, 5]

export interface Task {
  item_id: string
  image_ref: string
  assigned_label: string
  explanation: string
  language: string
  guideline_ref: string
}

export interface Progress {
  annotator_completed: number
  items_total: number
  ratings_total: number
  quota: number
}

export interface NextTaskResponse {
  done: boolean
  task?: Task
  metrics?: string[]
  scale?: { lower: number; upper: number }
  progress?: Progress
}

export interface RatingPayload {
  item_id: string
  annotator_id: string
  scores: Record<Metric, Score>
}

import type { NextTaskResponse, Progress, RatingPayload } from './types.js'

/** Error carrying the HTTP status so callers can branch on conflicts. */
export class ApiError extends Error {
  constructor(
    public readonly status: number,
    detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`)
    this.name = 'ApiError'
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>

/** Thin typed client over the annotation service HTTP API. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init)
    if (!response.ok) {
      let detail = response.statusText
      try {
        const body = (await response.json()) as { detail?: string }
        if (body.detail) detail = body.detail
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(response.status, detail)
    }
    return (await response.json()) as T
  }

  nextTask(annotator: string): Promise<NextTaskResponse> {
    return this.request<NextTaskResponse>(
      `/api/tasks/next?annotator=${encodeURIComponent(annotator)}`,
    )
  }

  async submitRating(payload: RatingPayload): Promise<Progress> {
    const body = await this.request<{ ok: boolean; progress: Progress }>('/api/ratings', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(payload),
    })
    return body.progress
  }

  progress(annotator: string): Promise<Progress> {
    return this.request<Progress>(`/api/progress?annotator=${encodeURIComponent(annotator)}`)
  }

  imageUrl(itemId: string): string {
    return `${this.baseUrl}/api/items/${encodeURIComponent(itemId)}/image`
  }
}

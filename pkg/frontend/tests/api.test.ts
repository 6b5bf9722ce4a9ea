import { describe, expect, it, vi } from 'vitest'

import { ApiClient, ApiError } from '../src/api.js'
import type { RatingPayload } from '../src/types.js'

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { 'Content-Type': 'application/json' },
  })
}

const PAYLOAD: RatingPayload = {
  item_id: 'item1',
  annotator_id: 'tok-a',
  scores: { informativeness: 4, clarity: 5, plausibility: 3, faithfulness: 4 },
}

describe('ApiClient', () => {
  it('hits the next-task endpoint with the annotator token', async () => {
    const fetchMock = vi.fn().mockResolvedValue(
      jsonResponse({ done: false, task: { item_id: 'x' } }),
    )
    const client = new ApiClient('http://svc', fetchMock)
    await client.nextTask('tok a')
    expect(fetchMock).toHaveBeenCalledWith(
      'http://svc/api/tasks/next?annotator=tok%20a',
      undefined,
    )
  })

  it('posts rating payloads as JSON', async () => {
    const fetchMock = vi.fn().mockResolvedValue(
      jsonResponse({ ok: true, progress: { annotator_completed: 1 } }),
    )
    const client = new ApiClient('', fetchMock)
    const progress = await client.submitRating(PAYLOAD)
    expect(progress.annotator_completed).toBe(1)
    const [url, init] = fetchMock.mock.calls[0] as [string, RequestInit]
    expect(url).toBe('/api/ratings')
    expect(init.method).toBe('POST')
    expect(JSON.parse(init.body as string)).toEqual(PAYLOAD)
  })

  it('raises ApiError with the status and server detail', async () => {
    const fetchMock = vi.fn().mockResolvedValue(
      jsonResponse({ detail: 'rating already submitted' }, 409),
    )
    const client = new ApiClient('', fetchMock)
    try {
      await client.submitRating(PAYLOAD)
      expect.unreachable('should have thrown')
    } catch (err) {
      expect(err).toBeInstanceOf(ApiError)
      expect((err as ApiError).status).toBe(409)
      expect((err as ApiError).message).toContain('already submitted')
    }
  })

  it('propagates network failures as-is', async () => {
    const fetchMock = vi.fn().mockRejectedValue(new TypeError('fetch failed'))
    const client = new ApiClient('', fetchMock)
    await expect(client.nextTask('tok')).rejects.toThrow('fetch failed')
  })

  it('builds image URLs from item ids', () => {
    const client = new ApiClient('http://svc')
    expect(client.imageUrl('it/1')).toBe('http://svc/api/items/it%2F1/image')
  })
})

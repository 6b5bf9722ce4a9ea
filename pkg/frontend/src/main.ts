import { ApiClient } from './api.js'
import { AnnotationApp } from './app.js'

function annotatorToken(): string {
  const fromQuery = new URLSearchParams(window.location.search).get('annotator')
  if (fromQuery) {
    window.localStorage.setItem('annotator', fromQuery)
    return fromQuery
  }
  const stored = window.localStorage.getItem('annotator')
  if (stored) return stored
  const entered = window.prompt('Enter your annotator token:') ?? ''
  window.localStorage.setItem('annotator', entered)
  return entered
}

const container = document.getElementById('app')
if (container) {
  // served from the same origin as the API (see serve-annotation --ui)
  const app = new AnnotationApp(container, new ApiClient(''), annotatorToken())
  void app.start()
}

import { ApiClient, ApiError } from './api.js'
import { RatingForm } from './form.js'
import { GUIDELINE_INTRO, GUIDELINE_STEPS, LABEL_NOTE, METRIC_GUIDES } from './guidelines.js'
import { METRICS, SCORES, type Progress, type Task } from './types.js'

/**
 * Annotator screen: meme image, read-only label badge, explanation panel
 * (RTL for Arabic), guideline drawer, four Likert widgets, progress.
 *
 * All state is server-authoritative: a refresh mid-item re-fetches the same
 * assignment. Submission is enabled only once every metric has a score;
 * a duplicate-submission conflict (409) skips forward; a network failure
 * shows a retry affordance without losing the current selections.
 */
export class AnnotationApp {
  readonly form = new RatingForm()
  private current: Task | null = null
  private root: HTMLElement
  private focusedMetric = 0

  constructor(
    container: HTMLElement,
    private readonly client: ApiClient,
    private readonly annotator: string,
  ) {
    this.root = container
  }

  async start(): Promise<void> {
    await this.loadNext()
  }

  async loadNext(): Promise<void> {
    this.renderStatus('Loading next item…')
    let response
    try {
      response = await this.client.nextTask(this.annotator)
    } catch (err) {
      this.renderRetry(err, () => this.loadNext())
      return
    }
    if (response.done || !response.task) {
      this.renderDone(response.progress)
      return
    }
    this.form.reset()
    this.current = response.task
    this.renderTask(response.task, response.progress)
  }

  async submit(): Promise<void> {
    if (!this.current || !this.form.isComplete()) return
    const payload = this.form.toPayload(this.current.item_id, this.annotator)
    try {
      await this.client.submitRating(payload)
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // someone else filled the quota or this was already submitted: move on
        this.renderStatus('Item already fully rated; skipping forward.')
        await this.loadNext()
        return
      }
      if (err instanceof ApiError) {
        this.renderStatus(`Rejected: ${err.message}`)
        return
      }
      this.renderRetry(err, () => this.submit())
      return
    }
    await this.loadNext()
  }

  // -- rendering -------------------------------------------------------

  private clear(): void {
    this.root.textContent = ''
  }

  private renderStatus(text: string): void {
    let status = this.root.querySelector<HTMLElement>('.status')
    if (!status) {
      status = el('div', 'status')
      this.root.appendChild(status)
    }
    status.textContent = text
  }

  private renderRetry(err: unknown, retry: () => void): void {
    // selections stay in this.form; only the status area changes
    let status = this.root.querySelector<HTMLElement>('.status')
    if (!status) {
      status = el('div', 'status')
      this.root.appendChild(status)
    }
    status.textContent = `Network problem: ${err instanceof Error ? err.message : String(err)} `
    const button = el('button', 'retry') as HTMLButtonElement
    button.textContent = 'Retry'
    button.addEventListener('click', () => void retry())
    status.appendChild(button)
  }

  private renderDone(progress?: Progress): void {
    this.clear()
    this.current = null
    const panel = el('section', 'done')
    panel.appendChild(heading('All done'))
    const text = el('p')
    text.textContent = progress
      ? `You completed ${progress.annotator_completed} ratings. ` +
        `${progress.ratings_total} ratings collected across ${progress.items_total} items.`
      : 'No more items are assigned to you.'
    panel.appendChild(text)
    this.root.appendChild(panel)
  }

  private renderTask(task: Task, progress?: Progress): void {
    this.clear()

    const header = el('header', 'progress')
    header.textContent = progress
      ? `Completed: ${progress.annotator_completed} / ${progress.items_total}`
      : `Item ${task.item_id}`
    this.root.appendChild(header)

    const meme = el('section', 'meme')
    const image = el('img', 'meme-image') as HTMLImageElement
    image.src = this.client.imageUrl(task.item_id)
    image.alt = `meme ${task.item_id}`
    meme.appendChild(image)

    const badge = el('div', 'label-badge')
    badge.textContent = `Label: ${task.assigned_label}`
    badge.setAttribute('aria-readonly', 'true')
    meme.appendChild(badge)

    const note = el('p', 'label-note')
    note.textContent = LABEL_NOTE
    meme.appendChild(note)

    const explanation = el('blockquote', 'explanation')
    explanation.textContent = task.explanation
    explanation.dir = task.language === 'ar' ? 'rtl' : 'ltr'
    explanation.lang = task.language
    meme.appendChild(explanation)
    this.root.appendChild(meme)

    this.root.appendChild(renderGuidelines())
    this.root.appendChild(this.renderRatingForm())
    this.root.appendChild(el('div', 'status'))
  }

  private renderRatingForm(): HTMLElement {
    const formEl = el('form', 'ratings') as HTMLFormElement
    formEl.addEventListener('submit', (event) => event.preventDefault())

    METRICS.forEach((metric, index) => {
      const group = el('fieldset', 'metric') as HTMLFieldSetElement
      group.dataset.metric = metric
      group.tabIndex = 0
      const legend = el('legend')
      const guide = METRIC_GUIDES[index]
      const anchor = el('a') as HTMLAnchorElement
      anchor.href = `#guideline-${metric}`
      anchor.textContent = guide ? guide.title : metric
      legend.appendChild(anchor)
      group.appendChild(legend)

      for (const score of SCORES) {
        const label = el('label', 'score')
        const radio = el('input') as HTMLInputElement
        radio.type = 'radio'
        radio.name = metric
        radio.value = String(score)
        radio.addEventListener('change', () => {
          this.form.select(metric, score)
          this.syncSubmitState()
        })
        label.appendChild(radio)
        label.appendChild(document.createTextNode(String(score)))
        group.appendChild(label)
      }

      // keyboard shortcuts 1-5 rate the focused metric
      group.addEventListener('focus', () => {
        this.focusedMetric = index
      })
      group.addEventListener('keydown', (event) => {
        const key = (event as KeyboardEvent).key
        if (key >= '1' && key <= '5') {
          this.selectViaKeyboard(metric, Number(key))
          event.preventDefault()
        }
      })
      formEl.appendChild(group)
    })

    const submit = el('button', 'submit') as HTMLButtonElement
    submit.type = 'submit'
    submit.textContent = 'Submit ratings'
    submit.disabled = true
    submit.addEventListener('click', () => void this.submit())
    formEl.appendChild(submit)
    return formEl
  }

  private selectViaKeyboard(metric: string, score: number): void {
    this.form.select(metric, score)
    const radio = this.root.querySelector<HTMLInputElement>(
      `fieldset[data-metric="${metric}"] input[value="${score}"]`,
    )
    if (radio) radio.checked = true
    this.syncSubmitState()
  }

  private syncSubmitState(): void {
    const submit = this.root.querySelector<HTMLButtonElement>('button.submit')
    if (submit) submit.disabled = !this.form.isComplete()
  }
}

function el(tag: string, className?: string): HTMLElement {
  const node = document.createElement(tag)
  if (className) node.className = className
  return node
}

function heading(text: string): HTMLElement {
  const h = el('h2')
  h.textContent = text
  return h
}

function renderGuidelines(): HTMLElement {
  const drawer = el('details', 'guidelines') as HTMLDetailsElement
  const summary = el('summary')
  summary.textContent = 'Annotation guidelines'
  drawer.appendChild(summary)

  const intro = el('p')
  intro.textContent = GUIDELINE_INTRO
  drawer.appendChild(intro)

  for (const step of GUIDELINE_STEPS) {
    const title = el('h3')
    title.textContent = step.title
    drawer.appendChild(title)
    const list = el('ul')
    for (const point of step.points) {
      const item = el('li')
      item.textContent = point
      list.appendChild(item)
    }
    drawer.appendChild(list)
  }

  const note = el('p', 'label-note')
  note.textContent = LABEL_NOTE
  drawer.appendChild(note)

  for (const guide of METRIC_GUIDES) {
    const title = el('h4')
    title.id = `guideline-${guide.metric}`
    title.textContent = guide.title
    drawer.appendChild(title)
    const definition = el('p')
    definition.textContent = guide.definition
    drawer.appendChild(definition)
    const judging = el('p', 'judging')
    judging.textContent = guide.judging
    drawer.appendChild(judging)
    const anchors = el('ol', 'anchors')
    guide.anchors.forEach((anchorText) => {
      const item = el('li')
      item.textContent = anchorText
      anchors.appendChild(item)
    })
    drawer.appendChild(anchors)
  }
  return drawer
}

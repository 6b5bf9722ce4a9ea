import type { Metric } from './types.js'

/**
 * The annotation guidelines shown to annotators, rendered verbatim in the
 * collapsible drawer with one anchor per metric.
 */

export const GUIDELINE_INTRO =
  'You will be shown a meme, a label assigned to it, and an explanation for ' +
  'the assigned label. As an annotator, your task is to carefully examine ' +
  'each meme, label, and explanation. Then assess the quality of the ' +
  'explanation provided for the assigned label. Follow the steps below to ' +
  'ensure a thorough evaluation:'

export const GUIDELINE_STEPS: { title: string; points: string[] }[] = [
  {
    title: 'Analyze the Meme',
    points: [
      'Observe the image and read the accompanying text.',
      'Understand the overall message and the potential implications of the meme.',
    ],
  },
  {
    title: 'Check the Assigned Label',
    points: [
      'Check the given label. The label is the result of annotation done by multiple human annotators.',
    ],
  },
  {
    title: 'Evaluate the Explanation',
    points: [
      'Read the explanation provided for why the meme has been assigned its label.',
      'Assess the explanation based on the metrics below. Each metric is scored on a Likert scale from 1-5.',
    ],
  },
]

export const LABEL_NOTE =
  'Kindly note that to evaluate the explanation, you do not have to agree ' +
  'or disagree with the given label.'

export interface MetricGuide {
  metric: Metric
  title: string
  definition: string
  judging: string
  anchors: [string, string, string, string, string]
}

export const METRIC_GUIDES: MetricGuide[] = [
  {
    metric: 'informativeness',
    title: 'Informativeness',
    definition:
      'Measures the extent to which the explanation provides relevant and ' +
      'meaningful information for understanding the reasoning behind the ' +
      'label. A highly informative explanation offers detailed insights ' +
      'that directly contribute to the justification, while a ' +
      'low-informative explanation may be vague, incomplete, or lacking ' +
      'key details.',
    judging:
      'As an annotator, you are judging if the explanation provides enough ' +
      'information to explain the label assigned to the meme.',
    anchors: [
      'Not informative: The explanation lacks relevant details and does not help understand why the meme is labeled as such.',
      'Slightly informative: The explanation provides minimal information, but key details are missing or unclear.',
      'Moderately informative: The explanation contains some useful details but lacks depth or supporting reasoning.',
      'Informative: The explanation is well-detailed, providing a clear and meaningful justification for the label.',
      'Very informative: The explanation is thorough, insightful, and fully justifies the label with strong supporting details.',
    ],
  },
  {
    metric: 'clarity',
    title: 'Clarity',
    definition:
      'Assesses how clearly the explanation conveys its meaning. A clear ' +
      'explanation is well-structured, concise, and easy to understand ' +
      'without requiring additional effort. It should be free from ' +
      'ambiguity, overly complex language, or poor phrasing that might ' +
      'hinder comprehension.',
    judging:
      'As an annotator, you are judging the language and structure of the ' +
      'explanation. Spelling mistakes, awkward use of language, and ' +
      'incorrect translations will negatively impact this metric.',
    anchors: [
      'Very unclear: The explanation is confusing, vague, or difficult to understand.',
      'Somewhat unclear: The explanation has some clarity but includes ambiguous or poorly structured statements.',
      'Neutral: The explanation is somewhat clear but may require effort to fully grasp.',
      'Clear: The explanation is well-structured and easy to understand with minimal ambiguity.',
      'Very clear: The explanation is highly readable, precise, and effortlessly understandable.',
    ],
  },
  {
    metric: 'plausibility',
    title: 'Plausibility',
    definition:
      'Refers to the extent to which an explanation logically supports the ' +
      'assigned label and appears reasonable given the meme’s content. A ' +
      'plausible explanation should be coherent, factually consistent, and ' +
      'align with the expected reasoning behind the label. While it does ' +
      'not require absolute correctness, it should not contain obvious ' +
      'contradictions or illogical claims.',
    judging:
      'As an annotator, you are judging if the explanation actually ' +
      'supports the label assigned to the meme. For example, if a meme is ' +
      'labeled as Not Propaganda, the explanation given should justify ' +
      'that label.',
    anchors: [
      'Not plausible at all: The explanation does not align with the label and seems completely incorrect.',
      'Weakly plausible: The explanation has some relevance but lacks strong justification or contains logical inconsistencies.',
      'Moderately plausible: The explanation somewhat supports the label but may be incomplete or partially flawed.',
      'Plausible: The explanation logically supports the label and is mostly reasonable.',
      'Highly plausible: The explanation is fully aligned with the label and presents a strong, logical justification.',
    ],
  },
  {
    metric: 'faithfulness',
    title: 'Faithfulness',
    definition:
      'Measures how accurately an explanation reflects the reasoning ' +
      'behind the assigned label. A faithful explanation correctly ' +
      'represents the key factors and logical steps that justify the ' +
      'label, without adding misleading or unrelated details. High ' +
      'faithfulness means the explanation stays true to the actual ' +
      'reasoning used for classification, ensuring reliability and ' +
      'consistency.',
    judging:
      'As an annotator, you are judging how well the explanation reflects ' +
      'the logic behind the label. For example, if the explanation claims ' +
      'an implication of the meme, it should also present the logical ' +
      'reasoning behind it.',
    anchors: [
      'Not faithful at all: The explanation is completely unrelated to the given label and does not reflect a valid reasoning process.',
      'Weakly faithful: Some elements of the explanation are relevant, but much of it is misleading, inconsistent, or lacks proper justification.',
      'Moderately faithful: The explanation captures parts of the reasoning but includes unrelated, unclear, or unnecessary justifications.',
      'Faithful: The explanation aligns well with the reasoning behind the label and includes relevant, logical details.',
      'Highly faithful: The explanation fully and accurately reflects the correct reasoning, without any misleading or irrelevant information.',
    ],
  },
]

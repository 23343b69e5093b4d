"""Prompt templates used across the harness.

Each template is a plain format string; the field names inside the judge
and generation templates are load-bearing (parsers key on them), so edit
with care.
"""
from __future__ import annotations

SYSTEM_PROMPT = """\
Task: Answer the given visual question by combining careful image understanding \
with thorough web information seeking. Your goal is to return an accurate, \
well-supported final answer.

Inputs:
- question: {question}
- image: {image}

Core Principles:
- Stepwise decomposition: break the question into sub-questions and address them \
in a logical order. After each step, briefly summarize what has been established \
and state the next sub-question to pursue.
- Detailed image description: describe the image carefully even if the answer \
seems obvious. If the input contains multiple sub-images, describe each one \
separately.
- Evidence-driven web search: use web search to resolve unknown entities, verify \
claims, and disambiguate similar candidates. Prefer reliable sources and \
cross-check when results are ambiguous.
- Budgeted completion: produce a final answer within {budget} turns. If evidence \
remains incomplete, state the most likely answer and briefly note the remaining \
uncertainty.

Interaction format: wrap your reasoning in <think>...</think>, then either call \
one tool with <tool_call>{{"name": "...", "arguments": {{...}}}}</tool_call> or \
finish with <answer>...</answer>. Tool results arrive in \
<tool_response>...</tool_response>. Reference images only by their img_id from \
the registry table provided each turn.

Available tools:
{tool_descriptions}

Reference snippets for the image tools (run inside the sandbox; the helpers \
load_image(), save_image(img) and to_numpy(img, mode) are preloaded along with \
PIL.Image, ImageOps, ImageEnhance, ImageDraw and numpy as np):
{image_snippets}
"""

FORCED_FINALIZATION_PROMPT = (
    "The turn budget is exhausted. Do not call any more tools. Based only on the "
    "evidence gathered so far, state the most likely final answer now inside "
    "<answer>...</answer>; briefly note remaining uncertainty in <think>."
)

JUDGE_PROMPT = """\
Task: Judge whether the given response correctly answers the question based on \
the precise and unambiguous correct_answer.

Inputs:
- question: {question}
- response: {response}
- correct_answer: {correct_answer}

Output Fields:
- extracted_final_answer: the exact answer string extracted from response. If no \
clear final answer is present, use None.
- reasoning: a brief explanation of why extracted_final_answer does or does not \
match correct_answer. Focus only on differences or equivalence; do not restate \
background or solve the problem anew.
- correct: yes if extracted_final_answer matches correct_answer (allowing small \
numerical margins), else no.
- confidence: the confidence score (0%-100%) as given in response. If none is \
provided, use 100%.

Template:
extracted_final_answer: <answer or None>
reasoning: <your brief comparison>
correct: <yes or no>
confidence: <0-100>%
"""

QUERY_GENERATION_PROMPT = """\
Task: Given a knowledge-graph node chain (a single path), generate a single \
natural-language query whose reasoning follows the chain hop by hop. The root \
node must be resolved directly from the image (location identification). Each \
subsequent node corresponds to one hop needed by the query. Your output must \
also include (i) the concrete entity for every node and (ii) the reasoning that \
links each node to the next. Finally, output the gold answer, which is exactly \
the last node.

Notes:
1. Obfuscate all intermediate nodes. The query must not directly reveal \
intermediate entities (non-root, non-answer). Use vague but sufficient clues so \
that each hop is necessary. Missing any intermediate hop should make the final \
answer unattainable.
2. The answer must be unique and short. It can be a number or a word, but must \
be uniquely determined and concise.
3. Do not add extra clues for the root node. The root should be obtained from \
the image without additional textual hints.

Here is the input you need to process:
- kg_path: {kg_path}

Output format (JSON only):
{{
  "query": "",
  "nodes": [
    {{"hop": 1, "role": "", "entity": "", "reasoning": ""}},
    {{"hop": 2, "role": "", "entity": "", "reasoning": ""}}
  ],
  "gold_answer": ""
}}
"""

RATIONALITY_PROMPT = """\
Role: You are a professional AI interaction quality assessor. Your core task is \
to analyze dialogue snippets between a user and an AI assistant that include a \
<tool_call> tag and a <think> tag.

Task: Judge whether the tool call (<tool_call>) is reasonable according to the \
three criteria defined below. "Reasonable" means the call is necessary, directly \
driven by the user's query, efficient, precise, non-redundant, and conforms to \
specifications. Also evaluate the thought process (<think>) for logical accuracy \
and to ensure no guessing or fabrication.

Evaluation Criteria:
1. Information Non-Redundancy: the requested information or action in the tool \
call is not already provided or easily derivable from prior dialogue, the \
user's current question, or the assistant's previous answers. Check: is there \
any overlap or repeated request?
2. Goal Alignment: the tool call's purpose and expected result directly serve \
the user's explicit intent or core need in this turn. Check: does it advance \
the user's main objective?
3. Logical Reasoning and Accuracy: the assistant's thought process shows clear, \
correct logic and reliable grounding - no unfounded guesses or fabrications. \
The <think> section should be concise. Check: is the reasoning well-structured \
and evidence-based?

Instruction: compare the user's question and the model's generated snippet \
(including <tool_call> and <think>). If all criteria are met, output:
A
Otherwise (any criterion unmet or room for improvement), output:
B

User Question:
{query}

Model Generation:
{model_gen}
"""

FIXED_ANSWER_PROMPT = """\
You are given a visual question and evidence gathered by a fixed tool pipeline \
(image search hits, text search snippets, page summaries). Answer the question \
concisely with the single most likely answer. Output only the answer.

Question: {question}

Evidence:
{evidence}

Answer:"""

VISIT_SUMMARY_PROMPT = """\
Summarize the following page content with respect to this goal. Keep only \
goal-relevant facts, quote exact figures and names, and stay under {limit} \
characters.

Goal: {goal}

Page content:
{content}

Summary:"""

IMAGE_SNIPPETS = {
    "Crop": (
        "img = load_image()\n"
        "W, H = img.size\n"
        "out = img.crop((int(0.25*W), int(0.25*H), int(0.75*W), int(0.75*H)))\n"
        "save_image(out)"
    ),
    "Rotate": (
        "img = load_image()\n"
        "out = img.rotate(90, expand=True)\n"
        "save_image(out)"
    ),
    "Auxiliary Lines": (
        "img = load_image().convert('RGB')\n"
        "draw = ImageDraw.Draw(img)\n"
        "W, H = img.size\n"
        "draw.line([(0, H//2), (W, H//2)], fill=(255, 0, 0), width=3)\n"
        "save_image(img)"
    ),
    "Local Super-Resolution": (
        "img = load_image()\n"
        "W, H = img.size\n"
        "out = img.resize((2*W, 2*H), Image.LANCZOS)\n"
        "save_image(out)"
    ),
    "Pixel Analysis": (
        "import json\n"
        "arr = to_numpy(load_image(), mode='RGB')\n"
        "means = arr.reshape(-1, 3).mean(axis=0)\n"
        "print(json.dumps({'mean_rgb': [round(float(v), 2) for v in means]}))"
    ),
}


def render_image_snippets() -> str:
    blocks = []
    for name, code in IMAGE_SNIPPETS.items():
        blocks.append(f"# {name}\n{code}")
    return "\n\n".join(blocks)

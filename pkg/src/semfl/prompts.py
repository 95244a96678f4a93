"""Prompt templates for the three chat tasks plus result explanations.

Each system prompt is a module constant; the deterministic mock backend keys
its behaviour on which one it receives.
"""

MODULE_SYSTEM = """\
You are an experienced software analyst. You will receive one functional module \
of a program, given as a call subgraph observed at runtime: every method node with \
its source and developer comment, and every call edge with how often it fired.

Write a report on what this module does as a whole.

# Report Structure
# TITLE
A short name for the module's overall functionality.
# SUMMARY
How the module is organised and how its methods cooperate.
# DETAILED FINDINGS
A bullet list; each bullet explains the behaviour of one important method.
"""

METHOD_SYSTEM = """\
You are a code summarizer. You will receive one method (its code and developer \
comment) together with a summary of the module it runs in. State what the method \
is for and then walk through how it works, step by step.

# Report Structure
# FUNCTIONALITY
What the method does and what role it plays in its module.
# DESCRIPTION
One paragraph per step of the method's workflow, separated by blank lines. Each \
paragraph covers a run of consecutive statements.

# Example
## Method Code
int clamp(int v, int lo, int hi) {
    if (v < lo) return lo;
    if (v > hi) return hi;
    return v;
}
## Developer Comment
Restricts a value to a closed range.
## Module Context
Numeric helpers used by the layout engine.

# FUNCTIONALITY
Clamps an integer into the inclusive range [lo, hi]; the layout helpers use it to \
keep coordinates on screen.

# DESCRIPTION
Returns the lower bound when the value falls below it.

Returns the upper bound when the value exceeds it.

Otherwise returns the value unchanged.
"""

QUERY_SYSTEM = """\
You are debugging a failing test. Using the fault information below, either name \
the functionality you believe is faulty, or ask for more information about a \
functional module of the program.

# Response Format
Reply with a single JSON object and nothing else.
To ask for module details: {"request": "<description of the module functionality you need>"}
To answer: {"module": "<faulty module functionality>", "method": "<faulty method functionality>", \
"chunk": "<faulty statements' behaviour>"}
"""

FORCE_FINAL = (
    "No further module details are available. Answer now with the JSON object "
    'containing "module", "method" and "chunk".'
)

FORMAT_REMINDER = (
    "Your reply did not follow the required format. Respond with exactly the report "
    "structure requested above."
)

PROTOCOL_REMINDER = (
    "Your reply did not contain a valid JSON object of either allowed shape. Reply "
    "with one JSON object only."
)

EXPLAIN_SYSTEM = """\
You are assisting a developer with fault localization. Given a method ranked as \
suspicious, its functionality summary, and the queries describing the suspected \
fault, explain in two or three sentences why the method may be responsible.
"""


def render_method_prompt(code: str, comment: str | None, module_context: str | None) -> str:
    return (
        "## Method Code\n"
        f"{code}\n"
        "## Developer Comment\n"
        f"{comment if comment else '(none)'}\n"
        "## Module Context\n"
        f"{module_context if module_context else '(none)'}\n"
    )


def render_fault_prompt(test_code, test_output, stack_trace, module_details) -> str:
    parts = [
        "# Fault Information",
        "## Failed Test",
        test_code,
        "## Test Output",
        test_output or "(not available)",
        "## Stack Trace",
        stack_trace or "(not available)",
        "## Module Details",
    ]
    if module_details:
        for mid, text in module_details:
            parts.append(f"### {mid}\n{text}")
    else:
        parts.append("(none yet)")
    return "\n".join(parts) + "\n"


def render_explain_prompt(method_id, rank, score, functionality, queries) -> str:
    lines = [
        f"## Method\n{method_id}",
        f"## Rank\n{rank} (score {score:.4f})",
        f"## Functionality\n{functionality}",
        "## Queries",
    ]
    lines += [f"- {q}" for q in queries] or ["(none)"]
    return "\n".join(lines) + "\n"

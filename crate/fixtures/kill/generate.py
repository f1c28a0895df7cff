"""Regenerate the kill-point fixture set: replay files and verifier fixtures."""
import json
import os

LOOPS, ITERATIONS = 6, 3
conjecturer, prover, entries = [], [], []
n = 0
for loop in range(LOOPS):
    for it in range(ITERATIONS):
        count = 2 if (loop * ITERATIONS + it) % 4 == 0 else 1
        stmts = []
        for _ in range(count):
            stmt = f"theorem k_{n} : ({n} : ℕ) + {n} = 2 * {n} := sorry"
            stmts.append(stmt)
            if n % 3 == 0:
                prover.append("by\n  omega")
                entries.append({"op": "proof", "statement": stmt, "proof": "by\n  omega", "verdict": "verified"})
            elif n % 3 == 1:
                prover.append("by\n  simp")
                prover.append("```lean\nby\n  ring\n```")
                entries.append({"op": "proof", "statement": stmt, "proof": "by\n  ring", "verdict": "verified"})
            else:
                prover.append("")
            n += 1
        conjecturer.append("\n\n".join(stmts))

os.makedirs("replay", exist_ok=True)
for name, items in [("conjecturer", conjecturer), ("prover", prover)]:
    with open(f"replay/{name}.jsonl", "w") as f:
        for i, r in enumerate(items):
            rec = {"index": i, "system_prompt": "", "user_content": "", "response": r}
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
with open("verifier.json", "w") as f:
    json.dump({"entries": entries}, f, ensure_ascii=False, indent=2)

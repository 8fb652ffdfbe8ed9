"""VQA answer scoring, caption alignment metrics and rank correlation."""
from trajforge.benchscore import (
    AlignmentCounts,
    VQAQuestion,
    caption_scores,
    rank_correlation,
    score_vqa,
    shuffle_options,
    vqa_report,
)

opts = ["red cup", "blue cup", "green bowl", "yellow plate"]
shuffled, remap = shuffle_options("q-001", opts)
print(shuffled)
print(remap)

questions = [
    VQAQuestion("q-001", "multiple_choice", "B", "target_object", opts),
    VQAQuestion("q-002", "yes_no", "yes", "active_actor"),
    VQAQuestion("q-003", "number", "3", "object_interaction"),
    VQAQuestion("q-004", "yes_no", "no", "final_config"),
]
preds = {"q-001": "(B)", "q-002": "Yes.", "q-003": "3.0", "q-004": "perhaps"}
result = score_vqa(preds, questions)
print(vqa_report(result)["axes"], result["counts"]["invalid"], "invalid")

s = caption_scores(AlignmentCounts("demo", M=3, P=2, C=1, O=4, H=1, S=5, total_gt_facts=10))
print(f"consistency {s.consistency:.4f}  coverage {s.coverage:.4f}  anti-hallucination {s.anti_hallucination:.4f}  overall {s.overall:.4f}")

scores = {"m1": 0.91, "m2": 0.74, "m3": 0.70, "m4": 0.42, "m5": 0.38, "m6": 0.11}
ranks = {"m1": 1, "m2": 3, "m3": 2, "m4": 4, "m5": 5, "m6": 6}
pearson, spearman = rank_correlation(scores, ranks)
print(f"pearson {pearson:.3f}  spearman {spearman:.3f}")

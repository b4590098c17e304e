"""
Slot F1, intent accuracy and overall accuracy
=============================================

Slots are scored on spans, so one wrong B-/I- tag can cost both a false
positive and a false negative.  Overall accuracy counts an utterance only
when the intent and every slot tag are right.
"""
from han import Utterance, evaluate
from han.corpus import bio_spans

gold = Utterance("book a table at nobu tonight".split(),
                 ["O", "O", "O", "O", "B-REST", "B-TIME"], "BOOK")
pred = Utterance(gold.tokens, ["O", "O", "O", "O", "B-REST", "I-REST"], "BOOK")

print("gold spans:", bio_spans(gold.slots))
print("pred spans:", bio_spans(pred.slots))

# %%
# An I- tag whose type does not continue the previous span starts a new span.
print(bio_spans(["O", "I-TIME", "I-TIME", "B-REST", "I-TIME"]))

report = evaluate([gold, gold], [pred, gold])
print(report)
print("precision", report.precision, "recall", report.recall)

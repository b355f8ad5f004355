#!/usr/bin/env python3
"""Generates fixtures/wlac/suite.json: 200 autocompletion queries plus the
canned hypotheses the fixture sampler replays for them.

Query kinds (counts in KINDS):
  easy      gold word in one of the first 10 base hypotheses
  deep      gold only in base hypotheses 11-20
  gated     gold only in a hypothesis that needs top_k >= 20
  hot       gold only at temperatures above 1.0
  prefix    gold only in prefix-constrained continuations
  casefold  typed lowercase, gold capitalised
  decoy     another word with the typed prefix comes first
  miss      no hypothesis contains the typed prefix

Usage: python3 scripts/gen_wlac_suite.py > fixtures/wlac/suite.json
"""
import json
import random
import sys

SEED = 20231
KINDS = [("easy", 118), ("deep", 8), ("gated", 6), ("hot", 14), ("prefix", 12),
         ("casefold", 10), ("decoy", 18), ("miss", 14)]

WORDS = """ability absence academy accident account action activity address advice
agency agreement airport alarm amount analysis animal answer anxiety apartment
appeal approach argument arrival article aspect assembly attempt attention
audience author autumn balance bargain battery beauty bedroom behaviour benefit
bicycle birthday blanket border bottle boundary branch breakfast bridge brother
budget building business cabinet camera campaign candle capital career carpet
castle category ceiling century chamber channel chapter charity chicken childhood
chocolate church cinema circle citizen climate clothing coast collection college
comfort command comment committee community company comparison competition
concert condition conference confidence connection contract control corner
cottage council country courage cousin creature credit crisis culture currency
customer damage danger daughter debate decade decision defence degree delivery
demand deposit desert design desire detail device diamond dinner direction
distance district doctor document dragon drawing driver economy edition editor
effort election element emergency emotion empire energy engine entrance
envelope episode equipment estate evening evidence example exchange exercise
expert factory failure family farmer fashion feature festival figure finger
flight flower folder forest fortune freedom friend funeral furniture future
garden gesture ghost government grandfather guitar habit harbour harvest health
heaven height highway history holiday horizon hospital husband identity image
income industry injury insect instance island journey judgement kingdom kitchen
knowledge ladder language laughter lawyer leader lesson letter library licence
lifestyle liquid literature luggage machine magazine manager market marriage
meadow measure medicine meeting memory message method midnight minister mirror
mission moment monitor morning mother motion mountain museum mystery nation
nature needle neighbour network newspaper noise notice novel number object
occasion ocean office opinion orange orchestra outcome painting palace parent
passage patience pattern payment people pepper period permission person picture
planet platform pocket poetry police politics pollution portrait position
potato poverty powder prayer present pressure prince prison problem product
profit program promise property protest purpose quarter question rabbit
railway reason record region release remedy report rescue research respect
result revenue reward rhythm river router sailor salary sample satellite
schedule scholar science season secret sector senate servant session shadow
shelter shoulder silence sister soldier solution speaker spirit stadium station
statue stomach storage strategy street student studio subject success summer
surface survey symbol system talent teacher temple tension theatre theory
thunder ticket timber tongue tourist tower traffic tragedy train treasure
tunnel umbrella uncle union universe vacuum valley vehicle venture victory
village violin visitor volume voyage wallet warning weather wedding weekend
window winter witness wonder worker writer yellow youth""".split()

FILLER = "the a of to and in on with for at by from as was is it that this".split()


def sentence(rng, words, length=7):
    return " ".join(rng.choice(words) for _ in range(length))


def main():
    rng = random.Random(SEED)
    queries, entries = [], []
    qid = 0
    for kind, count in KINDS:
        for _ in range(count):
            qid += 1
            while True:
                gold = rng.choice(WORDS)
                typed = gold[: rng.randint(1, 3)]
                rivals = [w for w in WORDS if w.startswith(typed) and w != gold]
                if kind != "decoy" or rivals:
                    break
            if kind == "casefold":
                gold = gold.capitalize()
                typed = typed.lower()
            pool = [w for w in WORDS + FILLER if not w.lower().startswith(typed.lower())]
            source = f"源句 {qid:03d} " + "".join(rng.choice("我们今天医院研究政府学生时间问题") for _ in range(6))

            def filler(n):
                return [sentence(rng, pool) for _ in range(n)]

            def with_gold(text):
                words = text.split()
                words.insert(rng.randint(1, len(words)), gold)
                return " ".join(words)

            left = None
            base = filler(20)
            if kind in ("easy", "casefold"):
                i = rng.randint(0, 9)
                base[i] = with_gold(base[i])
            elif kind == "deep":
                i = rng.randint(10, 19)
                base[i] = with_gold(base[i])
            elif kind == "gated":
                i = rng.randint(0, 9)
                base.insert(i, {"text": with_gold(sentence(rng, pool)), "min_top_k": 20})
            elif kind == "decoy":
                decoy = rng.choice(rivals)
                i = rng.randint(0, 8)
                base[i] = with_gold(base[i])
                base[i] = decoy + " " + base[i]
            elif kind == "hot":
                for bucket in ("1.1", "1.2", "1.3"):
                    hyps = filler(20)
                    j = rng.randint(0, 9)
                    hyps[j] = with_gold(hyps[j])
                    entries.append({"source": source, "prefix": None, "temp_bucket": bucket, "hypotheses": hyps})
            elif kind == "prefix":
                left = "The " + rng.choice(pool)
                hyps = [left + " " + s for s in filler(20)]
                j = rng.randint(0, 9)
                hyps[j] = left + " " + with_gold(sentence(rng, pool))
                entries.append({"source": source, "prefix": left, "temp_bucket": None, "hypotheses": hyps})
            entries.append({"source": source, "prefix": None, "temp_bucket": None, "hypotheses": base})
            queries.append({
                "id": qid,
                "kind": kind,
                "source": source,
                "left_context": left,
                "right_context": sentence(rng, pool, 3),
                "typed": typed,
                "gold": gold,
            })
    json.dump({"seed": SEED, "queries": queries, "sampler": entries}, sys.stdout,
              ensure_ascii=False, indent=1)
    print()


if __name__ == "__main__":
    main()

"""Bundled example specifications."""

FEEDBACK = """\
// User feedback statistics: a rating score and a confidence value per report.
input score : Int64 range [1, 6]
input conf : Int64 range [-1, 1]
output adj := (6 - score) * 3 + conf + 1
output davg @1d@ :=
    adj.aggregate(over: 3d, using: avg).defaults(to: 0.0)
output low @1d@ := min(low.offset(by: -1).defaults(to: 15.0), davg)
output high @1d@ := max(high.offset(by: -1).defaults(to: 0.0), davg)
#[public]
output range @1d@ := (low, high)
"""

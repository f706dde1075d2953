"""Compile (model, sample, perturbation spec) into a verification QUBO.

The encoding follows the simplified constraint pipeline: fixed weights and
a fixed clean input reduce every product to a Buffer or Not gate, products
of non-perturbable pixels fold into constants inside each neuron's sign
constraint, the output-layer argmax comparison runs through two's
complement score differences, and the perturbation budget becomes a
slack-bit equality.  Feasible assignments of the result decode exactly to
adversarial masks within budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ir import (Constraint, ConstraintSystem, GateKind, QuadPoly,
                 QuboInstance, VarRole, assemble_qubo, gate_penalty,
                 linear_eq_penalty, signb_penalty, slack_encode_leq)
from .model import BnnModel, apply_mask, forward, spin_to_bool

# how a score tie between a competing class and the true label is flagged:
#   argmax      - match forward()'s lowest-index argmax exactly
#   adversarial - every tie counts as a misclassification
#   strict      - a competing class must strictly exceed the label's score
TIE_MODES = ("argmax", "adversarial", "strict")


@dataclass(frozen=True)
class PerturbationSpec:
    """Which input indices may flip, and how many flips are allowed."""

    perturbable: tuple[int, ...]
    budget: int
    tie_mode: str = "argmax"

    def __post_init__(self):
        object.__setattr__(self, "perturbable", tuple(sorted(self.perturbable)))
        if len(set(self.perturbable)) != len(self.perturbable):
            raise ValueError("duplicate perturbable indices")
        if self.budget < 0 or self.budget > len(self.perturbable):
            raise ValueError("budget must lie in [0, |perturbable|]")
        if self.tie_mode not in TIE_MODES:
            raise ValueError("unknown tie mode %r" % (self.tie_mode,))


@dataclass
class EncodedInstance:
    qubo: QuboInstance
    tau_vars: dict[int, int]  # input index -> VarId
    model: BnnModel
    input_spin: np.ndarray
    clean_label: int
    spec: PerturbationSpec
    meta: dict = field(default_factory=dict)


class _Encoder:
    def __init__(self, model: BnnModel, input_spin: np.ndarray, spec: PerturbationSpec):
        self.model = model
        self.x_spin = np.asarray(input_spin, dtype=np.int8)
        self.x_bool = spin_to_bool(self.x_spin)
        self.spec = spec
        self.cs = ConstraintSystem()
        self.tau_vars: dict[int, int] = {}

    def encode_first_layer(self):
        """Per perturbable pixel and neuron, one Buffer/Not gate on tau.

        With weight bit w and clean input bit x, the combined XOR/XNOR
        collapses to Buffer(tau) when w != x and Not(tau) when w == x.
        Non-perturbable pixels contribute XNOR(w, x) as a constant folded
        into the neuron's sign constraint.
        """
        model, cs, spec = self.model, self.cs, self.spec
        for j in spec.perturbable:
            if not 0 <= j < model.input_width:
                raise ValueError("perturbable index %d out of range" % j)
            self.tau_vars[j] = cs.new_var(VarRole.TAU, pixel=j)
        w0_bool = spin_to_bool(model.layers[0])
        n_out, n_in = w0_bool.shape
        perturbable = set(spec.perturbable)
        product_vars = []
        for i in range(n_out):
            row_vars = []
            fixed_ones = 0
            fixed_zeros = 0
            for j in range(n_in):
                w_b, x_b = int(w0_bool[i, j]), int(self.x_bool[j])
                if j in perturbable:
                    z = cs.new_var(VarRole.PRODUCT, layer=0, neuron=i, pixel=j)
                    kind = GateKind.BUFFER if w_b != x_b else GateKind.NOT
                    cs.add(gate_penalty(kind, self.tau_vars[j], z,
                                        label="L0/n%d/px%d/%s" % (i, j, kind.value)))
                    row_vars.append(z)
                else:
                    if w_b == x_b:
                        fixed_ones += 1
                    else:
                        fixed_zeros += 1
            out = cs.new_var(VarRole.NEURON, layer=1, neuron=i)
            aux = self._sign_layer(row_vars, out, fixed_ones, fixed_zeros,
                                   layer=0, neuron=i)
            product_vars.append((row_vars, out, aux))
        self.neuron_vars = [v for _, v, _ in product_vars]

    def _sign_layer(self, input_vars, out_var, fixed_ones, fixed_zeros, layer, neuron):
        fan_in = len(input_vars) + fixed_ones + fixed_zeros
        n_bits = (fan_in + 1).bit_length() - 1
        aux = [self.cs.new_var(VarRole.SIGN_AUX, layer=layer, neuron=neuron, bit=b)
               for b in range(n_bits - 1)]
        self.cs.add(signb_penalty(input_vars, out_var, aux,
                                  fixed_ones=fixed_ones, fixed_zeros=fixed_zeros,
                                  label="L%d/n%d/sign" % (layer, neuron)))
        return aux

    def encode_hidden_layer(self, layer_idx: int):
        """Products of a hidden layer: Buffer for w=+1, Not for w=-1."""
        cs = self.cs
        w_bool = spin_to_bool(self.model.layers[layer_idx])
        n_out, n_in = w_bool.shape
        prev = self.neuron_vars
        assert len(prev) == n_in
        next_neurons = []
        for i in range(n_out):
            row_vars = []
            for j in range(n_in):
                z = cs.new_var(VarRole.PRODUCT, layer=layer_idx, neuron=i, source=j)
                kind = GateKind.BUFFER if w_bool[i, j] else GateKind.NOT
                cs.add(gate_penalty(kind, prev[j], z,
                                    label="L%d/n%d/in%d/%s" % (layer_idx, i, j, kind.value)))
                row_vars.append(z)
            out = cs.new_var(VarRole.NEURON, layer=layer_idx + 1, neuron=i)
            self._sign_layer(row_vars, out, 0, 0, layer=layer_idx, neuron=i)
            next_neurons.append(out)
        self.neuron_vars = next_neurons

    def encode_output_layer(self, true_label: int):
        """Class-score comparisons in two's complement plus the
        misclassification requirement sum(r) >= 1.

        The flag r_i for class i is the Not of the sign bit of the score
        difference (optionally shifted by one to make ties non-adversarial,
        per tie mode).  Product variables for the true label's row are
        built once and shared by every comparison.
        """
        model, cs = self.model, self.cs
        c = model.class_count
        if not 0 <= true_label < c:
            raise ValueError("label out of range")
        w_bool = spin_to_bool(model.output_layer)
        out_idx = len(model.layers) - 1
        n_last = len(self.neuron_vars)
        b_width = math.ceil(math.log2(n_last)) + 1

        def product_row(i):
            row = []
            for j, y_var in enumerate(self.neuron_vars):
                z = cs.new_var(VarRole.PRODUCT, layer=out_idx, neuron=i, source=j)
                kind = GateKind.BUFFER if w_bool[i, j] else GateKind.NOT
                cs.add(gate_penalty(kind, y_var, z,
                                    label="Lout/c%d/in%d/%s" % (i, j, kind.value)))
                row.append(z)
            return row

        label_row = product_row(true_label)
        flag_vars = []
        for i in range(c):
            if i == true_label:
                continue
            row = product_row(i)
            # tie handling: shift the encoded difference by -1 where a tie
            # must NOT count as a win for class i
            if self.spec.tie_mode == "adversarial":
                shift = 0
            elif self.spec.tie_mode == "strict":
                shift = -1
            else:  # argmax: lower index wins the tie
                shift = 0 if i < true_label else -1
            terms = {z: 1 for z in row}
            for z in label_row:
                terms[z] = terms.get(z, 0) - 1
            bits = [cs.new_var(VarRole.TWOS_BIT, cls=i, bit=b) for b in range(b_width)]
            sign_bit = bits[-1]
            terms[sign_bit] = 2 ** (b_width - 1)
            for b in range(b_width - 1):
                terms[bits[b]] = terms.get(bits[b], 0) - 2**b
            cs.add(linear_eq_penalty(terms, shift, label="Lout/c%d/twos" % i))
            r = cs.new_var(VarRole.ARGMAX_FLAG, cls=i)
            cs.add(gate_penalty(GateKind.NOT, sign_bit, r, label="Lout/c%d/flag" % i))
            flag_vars.append(r)

        # strict inequality sum(r) > 0 as sum(r) - 1 - slack = 0
        n_slack = max(0, (c - 2).bit_length() if c > 2 else 0)
        slack = [cs.new_var(VarRole.SLACK, purpose="misclass", bit=b)
                 for b in range(n_slack)]
        terms = {r: 1 for r in flag_vars}
        for b, s in enumerate(slack):
            terms[s] = -(2**b)
        cs.add(linear_eq_penalty(terms, -1, label="misclassified"))
        self.flag_vars = flag_vars

    def encode_budget(self):
        """sum(tau) <= budget via binary slack, objective H0 = sum(tau)."""
        con, slack = slack_encode_leq(
            [self.tau_vars[j] for j in self.spec.perturbable],
            self.spec.budget, self.cs, label="budget")
        objective = QuadPoly()
        for j in self.spec.perturbable:
            objective.add_linear(self.tau_vars[j], 1)
        self.objective = objective


def build_verification_qubo(model: BnnModel, input_spin: np.ndarray, label: int,
                            spec: PerturbationSpec, weights=None) -> EncodedInstance:
    """Run all four encode stages and assemble with uniform penalties."""
    clean_label, _, _ = forward(model, input_spin)
    if clean_label != label:
        raise ValueError("clean prediction %d does not match label %d; "
                         "verification is vacuous" % (clean_label, label))
    enc = _Encoder(model, input_spin, spec)
    enc.encode_first_layer()
    for layer_idx in range(1, len(model.layers) - 1):
        enc.encode_hidden_layer(layer_idx)
    enc.encode_output_layer(label)
    enc.encode_budget()
    qubo = assemble_qubo(enc.objective, enc.cs.constraints, enc.cs, weights)
    return EncodedInstance(
        qubo=qubo,
        tau_vars=dict(enc.tau_vars),
        model=model,
        input_spin=np.asarray(input_spin, dtype=np.int8),
        clean_label=clean_label,
        spec=spec,
        meta={
            "model_hash": model.content_hash(),
            "num_vars": qubo.num_vars,
            "num_constraints": len(qubo.constraints),
        },
    )


def class_flags(model: BnnModel, scores: np.ndarray, true_label: int,
                tie_mode: str) -> np.ndarray:
    """The argmax flags implied by integer output scores."""
    flags = []
    for i in range(model.class_count):
        if i == true_label:
            continue
        d = int(scores[i]) - int(scores[true_label])
        if tie_mode == "adversarial":
            win = d >= 0
        elif tie_mode == "strict":
            win = d > 0
        else:
            win = d > 0 or (d == 0 and i < true_label)
        flags.append(1 if win else 0)
    return np.array(flags, dtype=np.int8)


def propagate_assignment(inst: EncodedInstance, mask: np.ndarray) -> np.ndarray:
    """Construct the full assignment implied by a perturbation mask.

    Simulates the gate/sign/comparison circuit on the perturbed input and
    fills every variable with its implied value.  The result satisfies all
    constraints exactly when the mask is within budget and adversarial
    (under the instance's tie mode).
    """
    model, spec = inst.model, inst.spec
    mask = np.asarray(mask, dtype=np.int8)
    if mask.shape != (model.input_width,):
        raise ValueError("mask length mismatch")
    if np.any(mask[[j for j in range(model.input_width) if j not in spec.perturbable]]):
        raise ValueError("mask flips a non-perturbable pixel")
    x_pert = apply_mask(inst.input_spin, mask)
    _, activations, scores = forward(model, x_pert)
    x_bool = spin_to_bool(x_pert)
    act_bool = [spin_to_bool(a) for a in activations]

    assignment = np.zeros(inst.qubo.num_vars, dtype=np.int8)

    def layer_inputs_bool(layer_idx):
        return x_bool if layer_idx == 0 else act_bool[layer_idx - 1]

    # per-neuron Boolean sums, for sign aux bits
    z_bool_cache = {}

    def product_bit(layer_idx, neuron, j):
        key = (layer_idx, neuron, j)
        if key not in z_bool_cache:
            w_b = 1 if model.layers[layer_idx][neuron, j] > 0 else 0
            in_b = int(layer_inputs_bool(layer_idx)[j])
            z_bool_cache[key] = 1 if w_b == in_b else 0
        return z_bool_cache[key]

    out_idx = len(model.layers) - 1
    for info in inst.qubo.var_info:
        role, meta = info.role, info.meta
        if role == VarRole.TAU:
            assignment[info.index] = mask[meta["pixel"]]
        elif role == VarRole.PRODUCT:
            j = meta.get("pixel", meta.get("source"))
            assignment[info.index] = product_bit(meta["layer"], meta["neuron"], j)
        elif role == VarRole.NEURON:
            assignment[info.index] = act_bool[meta["layer"] - 1][meta["neuron"]]
        elif role == VarRole.SIGN_AUX:
            layer_idx, neuron = meta["layer"], meta["neuron"]
            total = sum(product_bit(layer_idx, neuron, j)
                        for j in range(model.layers[layer_idx].shape[1]))
            assignment[info.index] = (total >> meta["bit"]) & 1
        elif role == VarRole.TWOS_BIT:
            i = meta["cls"]
            d = (int(scores[i]) - int(scores[inst.clean_label])) // 2
            if spec.tie_mode == "strict" or (spec.tie_mode == "argmax"
                                             and i > inst.clean_label):
                d -= 1
            b_width = math.ceil(math.log2(len(model.layers[-2]))) + 1
            assignment[info.index] = (d % 2**b_width >> meta["bit"]) & 1
        elif role == VarRole.ARGMAX_FLAG:
            i = meta["cls"]
            flags = class_flags(model, scores, inst.clean_label, spec.tie_mode)
            pos = i if i < inst.clean_label else i - 1
            assignment[info.index] = flags[pos]
        elif role == VarRole.SLACK:
            if meta["purpose"] == "budget":
                value = max(spec.budget - int(mask.sum()), 0)
            else:  # misclass
                flags = class_flags(model, scores, inst.clean_label, spec.tie_mode)
                value = max(int(flags.sum()) - 1, 0)
            assignment[info.index] = (value >> meta["bit"]) & 1
    return assignment


def mapping_to_json(inst: EncodedInstance) -> dict:
    """Sidecar mapping: var index -> semantic role, for external decoders."""
    var_rows = []
    for info in inst.qubo.var_info:
        row = {"index": info.index, "role": info.role.value}
        row.update(info.meta)
        var_rows.append(row)
    return {
        "num_vars": inst.qubo.num_vars,
        "model_hash": inst.meta["model_hash"],
        "clean_label": inst.clean_label,
        "spec": {
            "perturbable": list(inst.spec.perturbable),
            "budget": inst.spec.budget,
            "tie_mode": inst.spec.tie_mode,
        },
        "tau_vars": {str(j): v for j, v in sorted(inst.tau_vars.items())},
        "vars": var_rows,
    }

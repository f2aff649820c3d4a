"""Federated round orchestration.

One round: broadcast the global prompt set, run local prompt tuning on
every client shard, evaluate each client's result on the server's
balanced validation split, fuse the client prompts (fairness-score
weighted, or uniform for the baseline), optionally refine the fused
prompts on the server, then evaluate the new global prompts on the
held-out test set.

All randomness is derived from (master_seed, purpose, round, client),
so any execution order of the per-client work produces identical
results. The frozen backbone is hashed at the start and checked every
round; prompt training must never touch it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import tensor as T
from .tensor import NonFiniteError, Tensor, no_grad
from .config import Config
from .data import (
    Dataset,
    SyntheticSpec,
    balanced_test_sample,
    dirichlet_partition,
    generate_synthetic,
    load_embeddings,
)
from .debias import (
    DemographicSubspace,
    build_subspace,
    fairness_loss,
    joint_loss,
    project_out,
    task_loss,
)
from .encoder import EncoderConfig, PromptSet, VisionEncoder, build_prompt_templates
from .metrics import (
    GroupConfusion,
    MetricRecord,
    accuracy_gap,
    balanced_accuracy,
    confusion_by_group,
    demographic_parity,
    eod_global,
    equalized_odds,
)
from .optim import AdamWState, adamw_init, adamw_step
from .report import FairnessReport, RoundRecord

__all__ = [
    "FederationError",
    "EvalBundle",
    "FederationContext",
    "ClientState",
    "RoundResult",
    "client_update",
    "evaluate_prompts",
    "predict",
    "score_from_record",
    "score_prompt",
    "fusion_weights",
    "fuse_prompts",
    "fuse_uniform",
    "refinement_loss",
    "server_refine",
    "run_federation",
    "load_splits",
    "derive_seed",
    "client_stream",
]

_EVAL_CHUNK = 64  # per-sample cost rises again past ~64 rows (cache pressure)

# purpose tags for seed derivation; never reuse a number
_SEED_TRAIN = 1
_SEED_TEST_POOL = 2
_SEED_VAL_POOL = 3
_SEED_TEST_PICK = 4
_SEED_VAL_PICK = 5
_SEED_PARTITION = 6
_SEED_PROMPTS = 7
_SEED_CLIENT = 8
_SEED_REFINE = 9


class FederationError(RuntimeError):
    """A round aborted; the message is the diagnostic."""


def derive_seed(master_seed: int, *tags: int) -> int:
    """Collision-resistant child seed for (master, purpose, ...) tuples."""
    ss = np.random.SeedSequence((int(master_seed),) + tuple(int(t) for t in tags))
    return int(ss.generate_state(1, np.uint32)[0])


def client_stream(master_seed: int, round_index: int, client_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(
        (int(master_seed), _SEED_CLIENT, int(round_index), int(client_id))
    )
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class EvalBundle:
    """Encoder-ready evaluation split: embedded rows plus annotations."""

    features: np.ndarray  # (n, rows, d)
    labels: np.ndarray
    groups: np.ndarray

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class FederationContext:
    """Shared immutable state every client sees: model, losses, val split."""

    encoder: VisionEncoder
    class_text: np.ndarray  # (C, d) unit rows, class index = row index
    subspace: DemographicSubspace | None
    temperature: float
    cdfp_enabled: bool
    compound: bool
    mu: float
    lam1: float
    val: EvalBundle


@dataclass
class ClientState:
    """One client's shard and per-round working state.

    ``stream`` must be (re)derived from (master_seed, round, client_id)
    before each call to client_update; the orchestrator owns that.
    """

    client_id: int
    features: np.ndarray  # (n, rows, d) embedded shard
    labels: np.ndarray
    groups: np.ndarray
    ctx: FederationContext
    stream: np.random.Generator | None = None
    prompts: PromptSet | None = None
    opt_state: AdamWState | None = None
    val_confusion: GroupConfusion | None = None


@dataclass(frozen=True)
class RoundResult:
    """Everything one round produced, before report conversion."""

    client_prompts: list[PromptSet]
    client_records: list[MetricRecord]
    scores: list[float]
    weights: list[float]
    fused: PromptSet
    refined: PromptSet

    def __post_init__(self):
        n = len(self.client_prompts)
        if not (len(self.client_records) == len(self.scores) == len(self.weights) == n):
            raise ValueError("per-client lists must share one length")
        if self.weights:
            total = sum(self.weights)
            if abs(total - 1.0) > 1e-12:
                raise ValueError(f"fusion weights sum to {total!r}, not 1")
            if min(self.weights) < 0.0:
                raise ValueError("negative fusion weight")


def predict(
    encoder: VisionEncoder,
    prompts: PromptSet,
    features: np.ndarray,
    class_text: np.ndarray,
    *,
    cdfp_enabled: bool = True,
    compound: bool = True,
    subspace: DemographicSubspace | None = None,
) -> np.ndarray:
    """Class predictions by nearest class template in embedding space.

    When a subspace is given the demographic component is projected out
    first, i.e. prediction runs on the same debiased embedding the
    training loss sees. The argmax over fixed unit text rows is scale
    invariant, so the debiased embedding needs no re-normalization.
    """
    preds = []
    with no_grad():
        for lo in range(0, features.shape[0], _EVAL_CHUNK):
            z, _ = encoder.encode_image(
                features[lo : lo + _EVAL_CHUNK],
                prompts,
                cdfp_enabled=cdfp_enabled,
                compound=compound,
            )
            if subspace is not None:
                z = project_out(z, subspace)[0]
            preds.append(np.argmax(z.data @ class_text.T, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate_prompts(
    encoder: VisionEncoder,
    prompts: PromptSet,
    bundle: EvalBundle,
    class_text: np.ndarray,
    *,
    cdfp_enabled: bool = True,
    compound: bool = True,
    subspace: DemographicSubspace | None = None,
) -> tuple[MetricRecord, GroupConfusion]:
    """All five report metrics of one prompt set on one split.

    ``f_global`` here is the single-confusion specialization of the
    cross-client recall-parity aggregate (one participant).
    """
    preds = predict(
        encoder,
        prompts,
        bundle.features,
        class_text,
        cdfp_enabled=cdfp_enabled,
        compound=compound,
        subspace=subspace,
    )
    conf = confusion_by_group(preds, bundle.labels, bundle.groups)
    record = MetricRecord(
        a_b=balanced_accuracy(conf),
        phi_a=accuracy_gap(conf),
        phi_demo=demographic_parity(conf),
        phi_eq=equalized_odds(conf),
        f_global=eod_global([conf])[0],
    )
    return record, conf


def score_from_record(record: MetricRecord, bias_metric: str = "eq") -> float:
    """Fusion score: balanced accuracy discounted by validation bias.

    The accuracy-gap bias lives in [0, 2], so its discount is floored
    at zero to keep scores in [0, 1].
    """
    bias = {
        "eq": record.phi_eq,
        "demo": record.phi_demo,
        "a": record.phi_a,
    }[bias_metric]
    return record.a_b * max(0.0, 1.0 - bias)


def score_prompt(
    encoder: VisionEncoder,
    prompts: PromptSet,
    val: EvalBundle,
    class_text: np.ndarray,
    *,
    bias_metric: str = "eq",
    cdfp_enabled: bool = True,
    compound: bool = True,
    subspace: DemographicSubspace | None = None,
) -> tuple[float, float, float]:
    """Evaluate on the validation split; returns (score, accuracy, bias)."""
    record, _ = evaluate_prompts(
        encoder,
        prompts,
        val,
        class_text,
        cdfp_enabled=cdfp_enabled,
        compound=compound,
        subspace=subspace,
    )
    score = score_from_record(record, bias_metric)
    bias = {"eq": record.phi_eq, "demo": record.phi_demo, "a": record.phi_a}[bias_metric]
    return score, record.a_b, bias


def _local_loss(ctx: FederationContext, prompts: PromptSet, rows: np.ndarray,
                targets: np.ndarray) -> Tensor:
    z, _ = ctx.encoder.encode_image(
        rows, prompts, cdfp_enabled=ctx.cdfp_enabled, compound=ctx.compound
    )
    if ctx.subspace is None:
        return task_loss(z, z, targets, ctx.temperature)
    z_debiased, _ = project_out(z, ctx.subspace)
    fair = fairness_loss(z_debiased, ctx.subspace, ctx.mu)
    task = task_loss(z_debiased, z, targets, ctx.temperature)
    return joint_loss(task, fair, ctx.lam1).l_final


def _trainable(prompts: PromptSet, cdfp_enabled: bool) -> dict[str, Tensor]:
    # mixing queries only receive gradient when cross-layer mixing runs
    return {
        name: p
        for name, p in prompts.parameters().items()
        if cdfp_enabled or name.startswith("tokens")
    }


def client_update(
    state: ClientState,
    global_prompts: PromptSet,
    epochs: int = 1,
    batch_size: int = 16,
    lr: float = 2e-4,
) -> tuple[PromptSet, MetricRecord]:
    """Local prompt tuning from the broadcast global prompts.

    Copies the global prompts, runs ``epochs`` shuffled mini-batch
    passes of AdamW on the joint objective, then evaluates the result
    on the shared validation split. Optimizer moments start fresh each
    round: they describe the previous local trajectory, which fusion
    has invalidated. A non-finite loss or gradient aborts the round.
    """
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if state.labels.shape[0] == 0:
        raise ValueError(f"client {state.client_id} has an empty shard")
    if state.stream is None:
        raise ValueError(f"client {state.client_id} has no derived stream for this round")
    ctx = state.ctx
    prompts = global_prompts.copy()
    trainable = _trainable(prompts, ctx.cdfp_enabled)
    state.opt_state = adamw_init({k: p.data for k, p in trainable.items()})
    n = state.labels.shape[0]
    targets = ctx.class_text[state.labels]
    for epoch in range(epochs):
        order = state.stream.permutation(n)
        for lo in range(0, n, batch_size):
            batch = order[lo : lo + batch_size]
            try:
                loss = _local_loss(ctx, prompts, state.features[batch], targets[batch])
            except NonFiniteError as exc:
                raise FederationError(
                    f"client {state.client_id}: {exc} (epoch {epoch}, batch offset {lo})"
                ) from None
            if not np.isfinite(loss.data):
                raise FederationError(
                    f"client {state.client_id}: non-finite loss "
                    f"(epoch {epoch}, batch offset {lo})"
                )
            reached = T.backward(loss)
            grads = {k: reached[p] for k, p in trainable.items()}
            try:
                arrays, state.opt_state = adamw_step(
                    {k: p.data for k, p in trainable.items()},
                    grads,
                    state.opt_state,
                    lr=lr,
                )
            except FloatingPointError as exc:
                raise FederationError(f"client {state.client_id}: {exc}") from None
            for name, p in trainable.items():
                p.data = arrays[name]
                p.grad = None
    record, conf = evaluate_prompts(
        ctx.encoder,
        prompts,
        ctx.val,
        ctx.class_text,
        cdfp_enabled=ctx.cdfp_enabled,
        compound=ctx.compound,
        subspace=ctx.subspace,
    )
    state.prompts = prompts
    state.val_confusion = conf
    return prompts, record


def fusion_weights(scores) -> np.ndarray:
    """Normalize non-negative scores to fusion weights (sum exactly 1)."""
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty 1-D sequence")
    if not np.isfinite(s).all() or (s < 0.0).any():
        raise ValueError("scores must be finite and >= 0")
    total = float(s.sum())
    if total <= 0.0:
        raise ValueError("degenerate federation: every client score is zero")
    return s / total


def fuse_prompts(prompt_sets: list[PromptSet], scores) -> PromptSet:
    """Score-weighted elementwise average of client prompt sets."""
    if not prompt_sets:
        raise ValueError("no prompt sets to fuse")
    if len(scores) != len(prompt_sets):
        raise ValueError(f"{len(prompt_sets)} prompt sets but {len(scores)} scores")
    weights = fusion_weights(scores)
    base = prompt_sets[0].to_arrays()
    fused = {name: weights[0] * arr for name, arr in base.items()}
    for w, ps in zip(weights[1:], prompt_sets[1:]):
        arrays = ps.to_arrays()
        if arrays.keys() != base.keys():
            raise ValueError("prompt sets disagree on parameter names")
        for name, arr in arrays.items():
            if arr.shape != base[name].shape:
                raise ValueError(f"prompt sets disagree on shape of '{name}'")
            fused[name] = fused[name] + w * arr
    out = prompt_sets[0].copy()
    out.load_arrays(fused)
    return out


def fuse_uniform(prompt_sets: list[PromptSet]) -> PromptSet:
    """Unweighted mean; the equal-score special case of fuse_prompts."""
    if not prompt_sets:
        raise ValueError("no prompt sets to fuse")
    return fuse_prompts(prompt_sets, [1.0] * len(prompt_sets))


def refinement_loss(
    prompts: PromptSet,
    features: np.ndarray,
    labels: np.ndarray,
    groups: np.ndarray,
    *,
    encoder: VisionEncoder,
    class_text: np.ndarray,
    temperature: float,
    lam2: float,
    subspace: DemographicSubspace | None = None,
    cdfp_enabled: bool = True,
    compound: bool = True,
) -> Tensor:
    """Differentiable server objective on one batch.

    Classification cross-entropy against the class templates plus
    ``lam2`` times the absolute gap between the groups' mean
    correct-class probabilities (the differentiable stand-in for the
    hard accuracy gap; reports always show the hard metric). The batch
    must contain both groups or the gap term is undefined.
    """
    groups = np.asarray(groups)
    masks = []
    for g in (0, 1):
        sel = (groups == g).astype(np.float64)
        count = float(sel.sum())
        if count == 0.0:
            raise ValueError("refinement batch needs both groups")
        masks.append(Tensor(sel / count))
    z, _ = encoder.encode_image(
        features, prompts, cdfp_enabled=cdfp_enabled, compound=compound
    )
    emb = z if subspace is None else T.l2_normalize(project_out(z, subspace)[0])
    logits = T.scale(T.matmul(emb, Tensor(class_text.T)), 1.0 / float(temperature))
    nll = T.scale(
        T.reduce_mean(T.take_per_row(T.log_softmax(logits, axis=1), labels)), -1.0
    )
    correct_prob = T.take_per_row(T.softmax(logits, axis=1), labels)
    group_means = [T.reduce_sum(T.mul(correct_prob, m)) for m in masks]
    gap = T.abs_value(T.sub(group_means[0], group_means[1]))
    return T.add(nll, T.scale(gap, float(lam2)))


def server_refine(
    prompts: PromptSet,
    val: EvalBundle,
    lam2: float,
    steps: int,
    lr: float,
    *,
    encoder: VisionEncoder,
    class_text: np.ndarray,
    temperature: float,
    rng: np.random.Generator,
    batch_size: int = 64,
    subspace: DemographicSubspace | None = None,
    cdfp_enabled: bool = True,
    compound: bool = True,
) -> PromptSet:
    """Polish fused prompts on the validation split.

    Runs AdamW on ``refinement_loss`` over group-balanced batches so
    the gap term is always defined.
    """
    if lam2 < 0.0:
        raise ValueError("lam2 must be >= 0")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    refined = prompts.copy()
    if steps == 0:
        return refined
    group_rows = [np.flatnonzero(val.groups == g) for g in (0, 1)]
    if not group_rows[0].size or not group_rows[1].size:
        raise ValueError("refinement needs both groups in the validation split")
    per = min(batch_size // 2, group_rows[0].size, group_rows[1].size)
    trainable = _trainable(refined, cdfp_enabled)
    opt_state = adamw_init({k: p.data for k, p in trainable.items()})
    batch_groups = np.repeat(np.array([0, 1]), per)
    for step in range(steps):
        idx = np.concatenate(
            [rng.choice(rows, size=per, replace=False) for rows in group_rows]
        )
        try:
            loss = refinement_loss(
                refined,
                val.features[idx],
                val.labels[idx],
                batch_groups,
                encoder=encoder,
                class_text=class_text,
                temperature=temperature,
                lam2=lam2,
                subspace=subspace,
                cdfp_enabled=cdfp_enabled,
                compound=compound,
            )
        except NonFiniteError as exc:
            raise FederationError(f"server refinement: {exc} at step {step}") from None
        if not np.isfinite(loss.data):
            raise FederationError(f"server refinement: non-finite loss at step {step}")
        reached = T.backward(loss)
        grads = {k: reached[p] for k, p in trainable.items()}
        try:
            arrays, opt_state = adamw_step(
                {k: p.data for k, p in trainable.items()}, grads, opt_state, lr=lr
            )
        except FloatingPointError as exc:
            raise FederationError(f"server refinement: {exc}") from None
        for name, p in trainable.items():
            p.data = arrays[name]
            p.grad = None
    return refined


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _encoder_rows(encoder: VisionEncoder, dataset: Dataset) -> np.ndarray:
    if dataset.kind == "features":
        return dataset.features
    return encoder.embed_patches(dataset.features)


def load_splits(config: Config) -> tuple[Dataset, Dataset, Dataset]:
    """Resolve (train, val, test) from data_dir files or synthetic draws."""
    if config.data_dir:
        paths = {
            name: os.path.join(config.data_dir, f"{name}.emb")
            for name in ("train", "val", "test")
        }
        return tuple(load_embeddings(paths[name]) for name in ("train", "val", "test"))
    master = config.master_seed
    train = generate_synthetic(
        SyntheticSpec(
            n=config.n_train,
            label_signal=config.label_signal,
            group_signal=config.group_signal,
            noise_sigma=config.noise_sigma,
            spurious_strength=config.spurious_strength,
            minority_attenuation=config.minority_attenuation,
            group_cue_rotation=config.group_cue_rotation,
            seed=derive_seed(master, _SEED_TRAIN),
        )
    )
    # evaluation pools are generated unbiased (rho=0): pixel content given
    # (y, g) does not depend on rho, and a biased pool starves the
    # minority cells that balanced sampling needs
    splits = []
    for n, pool_tag, pick_tag in (
        (config.n_val, _SEED_VAL_POOL, _SEED_VAL_PICK),
        (config.n_test, _SEED_TEST_POOL, _SEED_TEST_PICK),
    ):
        pool = generate_synthetic(
            SyntheticSpec(
                n=2 * n,
                label_signal=config.label_signal,
                group_signal=config.group_signal,
                noise_sigma=config.noise_sigma,
                spurious_strength=0.0,
                minority_attenuation=config.minority_attenuation,
            group_cue_rotation=config.group_cue_rotation,
                seed=derive_seed(master, pool_tag),
            )
        )
        picked = balanced_test_sample(pool, n, seed=derive_seed(master, pick_tag))
        splits.append(pool.subset(picked))
    val, test = splits
    return train, val, test


def run_federation(config: Config) -> FairnessReport:
    """Full multi-round run; returns the complete (or flagged) report."""
    started = _utcnow()
    enc_cfg = EncoderConfig(
        seed=config.encoder_seed,
        mlp_ratio=config.mlp_ratio,
        prompt_tokens=config.prompt_tokens,
    )
    encoder = VisionEncoder(enc_cfg)
    backbone_hash = encoder.backbone_hash()
    templates = build_prompt_templates(config.task, config.attribute)
    class_text = np.stack([encoder.encode_text(s) for s in templates.class_templates])
    subspace = (
        build_subspace(
            encoder,
            templates.group_templates,
            k=config.subspace_rank,
            attribute=config.attribute,
        )
        if config.dsop_enabled
        else None
    )

    train, val, test = load_splits(config)
    val_bundle = EvalBundle(_encoder_rows(encoder, val), val.labels, val.groups)
    test_bundle = EvalBundle(_encoder_rows(encoder, test), test.labels, test.groups)
    ctx = FederationContext(
        encoder=encoder,
        class_text=class_text,
        subspace=subspace,
        temperature=enc_cfg.temperature,
        cdfp_enabled=config.cdfp_enabled,
        compound=config.cdfp_compound,
        mu=config.mu,
        lam1=config.lambda1,
        val=val_bundle,
    )

    partition = dirichlet_partition(
        train, config.clients, config.alpha, seed=derive_seed(config.master_seed, _SEED_PARTITION)
    )
    train_rows = _encoder_rows(encoder, train)
    states = [
        ClientState(
            client_id=i,
            features=train_rows[shard],
            labels=train.labels[shard],
            groups=train.groups[shard],
            ctx=ctx,
        )
        for i, shard in enumerate(partition.shards)
    ]

    global_prompts = PromptSet.initialize(
        enc_cfg, seed=derive_seed(config.master_seed, _SEED_PROMPTS)
    )
    eval_flags = dict(
        cdfp_enabled=config.cdfp_enabled, compound=config.cdfp_compound, subspace=subspace
    )
    initial_record, _ = evaluate_prompts(
        encoder, global_prompts, test_bundle, class_text, **eval_flags
    )
    rounds = [RoundRecord(0, [], [], [], initial_record)]
    failure = ""
    try:
        for round_index in range(1, config.rounds + 1):
            client_prompts: list[PromptSet] = []
            client_records: list[MetricRecord] = []
            client_confs: list[GroupConfusion] = []
            for state in states:
                state.stream = client_stream(
                    config.master_seed, round_index, state.client_id
                )
                local_prompts, local_record = client_update(
                    state,
                    global_prompts,
                    epochs=config.local_epochs,
                    batch_size=config.batch_size,
                    lr=config.lr,
                )
                client_prompts.append(local_prompts)
                client_records.append(local_record)
                client_confs.append(state.val_confusion)
            scores = [
                score_from_record(rec, config.bias_metric) for rec in client_records
            ]
            if config.fpf_enabled:
                try:
                    weights = fusion_weights(scores)
                    fused = fuse_prompts(client_prompts, scores)
                except ValueError as exc:
                    raise FederationError(f"round {round_index}: {exc}") from None
                global_prompts = server_refine(
                    fused,
                    val_bundle,
                    config.lambda2,
                    config.refine_steps,
                    config.refine_lr,
                    encoder=encoder,
                    class_text=class_text,
                    temperature=enc_cfg.temperature,
                    rng=np.random.Generator(
                        np.random.PCG64(
                            np.random.SeedSequence(
                                (config.master_seed, _SEED_REFINE, round_index)
                            )
                        )
                    ),
                    batch_size=config.refine_batch,
                    subspace=subspace,
                    cdfp_enabled=config.cdfp_enabled,
                    compound=config.cdfp_compound,
                )
            else:
                weights = np.full(len(states), 1.0 / len(states))
                global_prompts = fuse_uniform(client_prompts)
            global_eval, _ = evaluate_prompts(
                encoder, global_prompts, test_bundle, class_text, **eval_flags
            )
            try:
                cross_f, excluded = eod_global(client_confs)
            except ValueError as exc:
                raise FederationError(f"round {round_index}: {exc}") from None
            rounds.append(
                RoundRecord(
                    round=round_index,
                    client_records=client_records,
                    scores=scores,
                    weights=[float(w) for w in weights],
                    global_record=MetricRecord(
                        a_b=global_eval.a_b,
                        phi_a=global_eval.phi_a,
                        phi_demo=global_eval.phi_demo,
                        phi_eq=global_eval.phi_eq,
                        f_global=cross_f,
                    ),
                    f_global_excluded=excluded,
                )
            )
            if encoder.backbone_hash() != backbone_hash:
                raise FederationError(
                    f"round {round_index}: frozen backbone hash changed"
                )
    except FederationError as exc:
        failure = str(exc)
    except NonFiniteError as exc:
        # overflow escaping a kernel outside the loss checks, e.g. during
        # evaluation of already-diverged prompts
        failure = str(exc)
    return FairnessReport(
        config=config,
        backbone_hash=backbone_hash,
        rounds=rounds,
        started=started,
        finished=_utcnow(),
        incomplete=bool(failure),
        failure=failure,
    )

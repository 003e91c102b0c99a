"""Synthetic labeled programs with planted malicious methods, and dataset splits.

Benign and malicious programs draw from the same API pool.  Motif APIs also
appear one at a time in benign code; only malicious programs contain a whole
motif as a contiguous ordered run inside a planted method.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dex.ir import dumps_ir
from .errors import BadRatios, InfeasibleSpec

_API_CLASSES = {
    "Landroid/app/Activity;": ["setContentView(I)V", "findViewById(I)Landroid/view/View;", "finish()V", "startActivity(Landroid/content/Intent;)V", "getIntent()Landroid/content/Intent;", "runOnUiThread(Ljava/lang/Runnable;)V"],
    "Landroid/content/Context;": ["getSharedPreferences(Ljava/lang/String;I)Landroid/content/SharedPreferences;", "getPackageName()Ljava/lang/String;", "getResources()Landroid/content/res/Resources;", "startService(Landroid/content/Intent;)Landroid/content/ComponentName;", "getFilesDir()Ljava/io/File;"],
    "Landroid/content/SharedPreferences;": ["getString(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;", "getBoolean(Ljava/lang/String;Z)Z", "edit()Landroid/content/SharedPreferences$Editor;"],
    "Landroid/content/SharedPreferences$Editor;": ["putString(Ljava/lang/String;Ljava/lang/String;)Landroid/content/SharedPreferences$Editor;", "apply()V", "commit()Z"],
    "Landroid/content/Intent;": ["putExtra(Ljava/lang/String;Ljava/lang/String;)Landroid/content/Intent;", "getStringExtra(Ljava/lang/String;)Ljava/lang/String;", "setAction(Ljava/lang/String;)Landroid/content/Intent;", "getAction()Ljava/lang/String;"],
    "Landroid/view/View;": ["setOnClickListener(Landroid/view/View$OnClickListener;)V", "setVisibility(I)V", "invalidate()V", "getContext()Landroid/content/Context;"],
    "Landroid/widget/TextView;": ["setText(Ljava/lang/CharSequence;)V", "getText()Ljava/lang/CharSequence;", "setTextColor(I)V"],
    "Landroid/widget/Toast;": ["makeText(Landroid/content/Context;Ljava/lang/CharSequence;I)Landroid/widget/Toast;", "show()V"],
    "Landroid/os/Handler;": ["post(Ljava/lang/Runnable;)Z", "postDelayed(Ljava/lang/Runnable;J)Z", "sendMessage(Landroid/os/Message;)Z"],
    "Landroid/os/Bundle;": ["getString(Ljava/lang/String;)Ljava/lang/String;", "putString(Ljava/lang/String;Ljava/lang/String;)V", "getInt(Ljava/lang/String;)I"],
    "Landroid/os/AsyncTask;": ["execute([Ljava/lang/Object;)Landroid/os/AsyncTask;", "onPreExecute()V", "cancel(Z)Z"],
    "Landroid/util/Log;": ["d(Ljava/lang/String;Ljava/lang/String;)I", "e(Ljava/lang/String;Ljava/lang/String;)I", "i(Ljava/lang/String;Ljava/lang/String;)I"],
    "Landroid/database/sqlite/SQLiteDatabase;": ["query(Ljava/lang/String;[Ljava/lang/String;Ljava/lang/String;[Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;)Landroid/database/Cursor;", "insert(Ljava/lang/String;Ljava/lang/String;Landroid/content/ContentValues;)J", "close()V"],
    "Landroid/database/Cursor;": ["moveToNext()Z", "getString(I)Ljava/lang/String;", "close()V"],
    "Landroid/graphics/Canvas;": ["drawBitmap(Landroid/graphics/Bitmap;FFLandroid/graphics/Paint;)V", "drawText(Ljava/lang/String;FFLandroid/graphics/Paint;)V"],
    "Landroid/graphics/BitmapFactory;": ["decodeResource(Landroid/content/res/Resources;I)Landroid/graphics/Bitmap;"],
    "Landroid/media/MediaPlayer;": ["start()V", "stop()V", "release()V"],
    "Landroid/net/ConnectivityManager;": ["getActiveNetworkInfo()Landroid/net/NetworkInfo;"],
    "Landroid/net/Uri;": ["parse(Ljava/lang/String;)Landroid/net/Uri;"],
    "Landroid/webkit/WebView;": ["loadUrl(Ljava/lang/String;)V", "getSettings()Landroid/webkit/WebSettings;"],
    "Lorg/json/JSONObject;": ["<init>(Ljava/lang/String;)V", "getString(Ljava/lang/String;)Ljava/lang/String;", "put(Ljava/lang/String;Ljava/lang/Object;)Lorg/json/JSONObject;"],
    "Lorg/apache/http/impl/client/DefaultHttpClient;": ["<init>()V"],
    "Ldalvik/system/DexClassLoader;": ["loadClass(Ljava/lang/String;)Ljava/lang/Class;"],
    "Landroid/app/AlarmManager;": ["set(IJLandroid/app/PendingIntent;)V"],
    "Landroid/app/NotificationManager;": ["notify(ILandroid/app/Notification;)V", "cancel(I)V"],
}
BENIGN_APIS: tuple[str, ...] = tuple(f"{cls}->{m}" for cls, ms in _API_CLASSES.items() for m in ms)

COMMON_APIS: tuple[str, ...] = (
    "Landroid/app/Activity;-><init>()V",
    "Landroid/app/Activity;->onCreate(Landroid/os/Bundle;)V",
    "Landroid/content/Intent;-><init>()V",
    "Landroid/content/Context;->getSystemService(Ljava/lang/String;)Ljava/lang/Object;",
)

IGNORED_APIS: tuple[str, ...] = (
    "Ljava/lang/StringBuilder;->append(Ljava/lang/String;)Ljava/lang/StringBuilder;",
    "Ljava/lang/String;->length()I",
    "Ljava/util/ArrayList;->add(Ljava/lang/Object;)Z",
    "Ljavax/crypto/Cipher;->doFinal([B)[B",
)

MOTIFS: tuple[tuple[str, ...], ...] = (
    (
        "Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;",
        "Landroid/telephony/SmsManager;->getDefault()Landroid/telephony/SmsManager;",
        "Landroid/telephony/SmsManager;->sendTextMessage(Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;Landroid/app/PendingIntent;Landroid/app/PendingIntent;)V",
    ),
    (
        "Landroid/telephony/TelephonyManager;->getLine1Number()Ljava/lang/String;",
        "Landroid/location/LocationManager;->getLastKnownLocation(Ljava/lang/String;)Landroid/location/Location;",
        "Lorg/apache/http/impl/client/DefaultHttpClient;->execute(Lorg/apache/http/client/methods/HttpUriRequest;)Lorg/apache/http/HttpResponse;",
    ),
    (
        "Landroid/content/pm/PackageManager;->getInstalledPackages(I)Ljava/util/List;",
        "Landroid/app/admin/DevicePolicyManager;->isAdminActive(Landroid/content/ComponentName;)Z",
        "Landroid/app/admin/DevicePolicyManager;->lockNow()V",
    ),
    (
        "Landroid/location/Criteria;->setAccuracy(I)V",
        "Landroid/location/Criteria;->setCostAllowed(Z)V",
        "Landroid/app/NotificationManager;->notify(ILandroid/app/Notification;)V",
    ),
)

_ROOT_NAMES = ("onCreate", "onStart", "onResume", "onReceive", "onClick", "run", "onStartCommand")
_ROOT_PROTO = {
    "onCreate": "(Landroid/os/Bundle;)V",
    "onReceive": "(Landroid/content/Context;Landroid/content/Intent;)V",
    "onClick": "(Landroid/view/View;)V",
    "onStartCommand": "(Landroid/content/Intent;II)I",
}
_NAMES = ("a", "b", "c", "d", "e", "f", "g", "h", "init", "load", "update", "handle", "process", "check", "send", "parse")
_PROTOS = ("()V", "(I)V", "(Ljava/lang/String;)V", "()Ljava/lang/String;", "(Landroid/content/Context;)Z")


@dataclass(frozen=True)
class SyntheticSpec:
    methods: tuple[int, int] = (20, 60)
    apis_per_method: tuple[int, int] = (0, 4)
    roots: tuple[int, int] = (2, 5)
    benign_pool: tuple[str, ...] = BENIGN_APIS
    common_apis: tuple[str, ...] = COMMON_APIS
    common_rate: float = 0.95
    ignored_pool: tuple[str, ...] = IGNORED_APIS
    motifs: tuple[tuple[str, ...], ...] = MOTIFS
    decoy_rate: float = 0.3
    planted: int = 2
    extra_call_prob: float = 0.1
    recursion_prob: float = 0.05
    seed: int = 0


@dataclass
class Sample:
    id: str
    label: str
    ir: dict
    planted: tuple[str, ...] = ()

    def manifest_record(self, ir_path: str) -> dict:
        return {"id": self.id, "label": self.label, "ir": ir_path, "planted": list(self.planted)}


def sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, sample_id])


def generate_synthetic_program(spec: SyntheticSpec, label: str, rng: np.random.Generator, name: str = "") -> tuple[dict, tuple[str, ...]]:
    """One IR document plus the signatures of its planted malicious methods.

    Methods form a random tree under a few root handlers, with occasional
    extra callers and recursive back edges.  Every non-root method is
    reachable from a root, so planted methods always appear in extraction.
    """
    lo, hi = spec.methods
    if lo > hi or lo < 1:
        raise InfeasibleSpec(f"bad method range {spec.methods}")
    n = int(rng.integers(lo, hi + 1))
    n_roots = int(rng.integers(spec.roots[0], spec.roots[1] + 1))
    if 2 * n_roots > n:
        raise InfeasibleSpec(f"{n} methods cannot host {n_roots} roots with children")
    malicious = label == "malicious"
    if malicious and spec.planted > n - n_roots:
        raise InfeasibleSpec(f"cannot plant {spec.planted} methods among {n - n_roots} non-root methods")
    if label not in ("malicious", "benign"):
        raise ValueError(f"unknown label {label!r}")

    app = f"Lcom/app{int(rng.integers(0, 10**6)):06d}"
    sigs: list[tuple[str, str, str]] = []
    seen = set()
    n_classes = max(1, n // 4)
    for i in range(n):
        if i < n_roots:
            mname = _ROOT_NAMES[i % len(_ROOT_NAMES)]
            proto = _ROOT_PROTO.get(mname, "()V")
            cls = f"{app}/{'ui' if i % 2 == 0 else 'svc'}/Entry{i};"
        else:
            cls = f"{app}/{'core' if i % 3 else 'util'}/C{int(rng.integers(0, n_classes))};"
            mname = str(rng.choice(_NAMES))
            proto = str(rng.choice(_PROTOS))
        key = (cls, mname, proto)
        k = 0
        while key in seen:
            k += 1
            key = (cls, f"{mname}{k}", proto)
        seen.add(key)
        sigs.append(key)

    bodies: list[list[str]] = [[] for _ in range(n)]
    callees: list[list[int]] = [[] for _ in range(n)]
    for i in range(n_roots, n):
        parent = i - n_roots if i < 2 * n_roots else int(rng.integers(0, i))
        callees[parent].append(i)
        if rng.random() < spec.extra_call_prob:
            other = int(rng.integers(0, i))
            if other != parent:
                callees[other].append(i)
        if rng.random() < spec.recursion_prob:
            callees[i].append(int(rng.integers(n_roots, i + 1)))

    pool = spec.benign_pool
    ranks = np.arange(1, len(pool) + 1)
    popularity = 1.0 / ranks
    popularity /= popularity.sum()
    shuffled = rng.permutation(len(pool))
    for i in range(n):
        k = int(rng.integers(spec.apis_per_method[0], spec.apis_per_method[1] + 1))
        body = [pool[shuffled[j]] for j in rng.choice(len(pool), size=k, p=popularity)]
        if spec.ignored_pool and rng.random() < 0.3:
            body.insert(int(rng.integers(0, len(body) + 1)), str(rng.choice(spec.ignored_pool)))
        if i < n_roots:
            body = [a for a in spec.common_apis if rng.random() < spec.common_rate] + body
        bodies[i] = body

    for motif in spec.motifs:
        for api in motif:
            if rng.random() < spec.decoy_rate:
                m = int(rng.integers(0, n))
                bodies[m].insert(int(rng.integers(0, len(bodies[m]) + 1)), api)

    planted: list[int] = []
    if malicious:
        planted = sorted(int(x) for x in rng.choice(np.arange(n_roots, n), size=spec.planted, replace=False))
        for m in planted:
            motif = spec.motifs[int(rng.integers(0, len(spec.motifs)))]
            at = int(rng.integers(0, len(bodies[m]) + 1))
            bodies[m][at:at] = list(motif)

    def sig(i: int) -> str:
        c, nm, p = sigs[i]
        return f"{c}->{nm}{p}"

    methods = []
    for i in range(n):
        invokes = list(bodies[i])
        for c in callees[i]:
            invokes.insert(int(rng.integers(0, len(invokes) + 1)), sig(c))
        cls, mname, proto = sigs[i]
        methods.append({"class": cls, "name": mname, "proto": proto, "invokes": invokes})
    doc = {"methods": methods, "label": label}
    if name:
        doc["name"] = name
    return doc, tuple(sig(m) for m in planted)


def generate_corpus(spec: SyntheticSpec, n_malicious: int = 1000, n_benign: int = 1000) -> list[Sample]:
    """Programs ``sample-00000`` onward; malicious first, each from its own seeded stream."""
    samples = []
    labels = ["malicious"] * n_malicious + ["benign"] * n_benign
    for i, label in enumerate(labels):
        sid = f"sample-{i:05d}"
        doc, planted = generate_synthetic_program(spec, label, sample_rng(spec.seed, i), name=sid)
        samples.append(Sample(sid, label, doc, planted))
    return samples


def write_corpus(samples: Iterable[Sample], out_dir) -> Path:
    """Write one IR file per sample plus ``manifest.jsonl``; returns the manifest path."""
    out = Path(out_dir)
    (out / "ir").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.jsonl"
    with manifest.open("w") as fh:
        for s in samples:
            rel = f"ir/{s.id}.json"
            (out / rel).write_text(dumps_ir(s.ir))
            fh.write(json.dumps(s.manifest_record(rel), sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> list[dict]:
    path = Path(path)
    records = []
    with path.open() as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rec["ir_path"] = str((path.parent / rec["ir"]).resolve())
                records.append(rec)
    return records


def split_dataset(items: Sequence, labels: Sequence[str], ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> tuple[list, list, list]:
    """Stratified, seeded train/validation/test split of ``items``."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative fractions summing to 1, got {tuple(ratios)}")
    rng = np.random.default_rng(seed)
    parts: tuple[list, list, list] = ([], [], [])
    for label in sorted(set(labels)):
        idx = [i for i, l in enumerate(labels) if l == label]
        idx = [idx[j] for j in rng.permutation(len(idx))]
        n_train = int(round(ratios[0] * len(idx)))
        n_val = int(round(ratios[1] * len(idx)))
        n_val = min(n_val, len(idx) - n_train)
        for part, chunk in zip(parts, (idx[:n_train], idx[n_train : n_train + n_val], idx[n_train + n_val :])):
            part.extend(chunk)
    return tuple([items[i] for i in sorted(p)] for p in parts)

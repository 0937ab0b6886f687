"""
Line-oriented key = value model configuration files.

    # comments and blank lines are ignored
    variant = B2              # start from a built-in grid (optional)
    name = my-model           # label (defaults to the variant)
    num_classes = 1000
    overlapping_patch_embed = true
    conv_ffn = true
    linear_sra_refine = true
    stage1.S = 4              # per-stage: S, C, L, attn, N, E
    stage1.attn = linear:7    # or sra:8

Without a variant every stage from 1 up must be given in full. Unknown keys,
repeated keys and non-positive integers are errors.
"""
from dataclasses import replace

from attention.attention import parse_attention_kind
from backbone.config import MAX_STAGES, ModelConfig, StageConfig, config_for
from utils.errors import ConfigParseError, InvalidConfigError

STAGE_FIELDS = {
    "S": "stride",
    "C": "channels",
    "L": "depth",
    "attn": "attn",
    "N": "heads",
    "E": "mlp_ratio",
}
FLAG_KEYS = ("overlapping_patch_embed", "conv_ffn", "linear_sra_refine")
TRUE_WORDS = {"true", "yes", "on", "1"}
FALSE_WORDS = {"false", "no", "off", "0"}


def _positive_int(value, key, line_no):
    try:
        number = int(value)
    except ValueError:
        raise ConfigParseError(f"{key} must be an integer, got {value!r}", line_no) from None
    if number < 1:
        raise ConfigParseError(f"{key} must be a positive integer, got {number}", line_no)
    return number


def _flag(value, key, line_no):
    word = value.lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ConfigParseError(f"{key} must be true or false, got {value!r}", line_no)


def _assignments(text):
    seen = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise ConfigParseError(f"expected 'key = value', got {raw.strip()!r}", line_no)
        if key in seen:
            raise ConfigParseError(f"{key} already set on line {seen[key]}", line_no)
        seen[key] = line_no
        yield line_no, key, value


def _stage_key(key, line_no):
    head, _, field_name = key.partition(".")
    index_text = head[len("stage"):]
    if not index_text.isdigit():
        raise ConfigParseError(f"unknown key {key!r}", line_no)
    if index_text != str(int(index_text)):
        raise ConfigParseError(f"stage index in {key!r} has a leading zero", line_no)
    index = int(index_text)
    if not 1 <= index <= MAX_STAGES:
        raise ConfigParseError(f"stage index must be 1-{MAX_STAGES}, got {index}", line_no)
    if field_name not in STAGE_FIELDS:
        known = ", ".join(STAGE_FIELDS)
        raise ConfigParseError(f"unknown stage field {field_name!r} (known: {known})", line_no)
    return index, STAGE_FIELDS[field_name]


def parse_config(text):
    """
    Parse a configuration file's text.

    Args:
        text: File contents

    Returns:
        ModelConfig

    Raises:
        ConfigParseError: With the offending line number
    """
    base = None
    variant_line = 1
    settings = {}
    stage_values = {}
    stage_lines = {}
    last_override_line = None

    for line_no, key, value in _assignments(text):
        if key == "variant":
            try:
                base = config_for(value)
            except InvalidConfigError as exc:
                raise ConfigParseError(str(exc), line_no) from None
            variant_line = line_no
        elif key == "name":
            settings["variant_name"] = value
        elif key == "num_classes":
            settings["num_classes"] = _positive_int(value, key, line_no)
        elif key in FLAG_KEYS:
            settings[key] = _flag(value, key, line_no)
        elif key.startswith("stage"):
            index, field_name = _stage_key(key, line_no)
            if field_name == "attn":
                try:
                    parsed = parse_attention_kind(value)
                except InvalidConfigError as exc:
                    raise ConfigParseError(str(exc), line_no) from None
            else:
                parsed = _positive_int(value, key, line_no)
            stage_values.setdefault(index, {})[field_name] = parsed
            stage_lines.setdefault(index, line_no)
            last_override_line = line_no
        else:
            raise ConfigParseError(f"unknown key {key!r}", line_no)

    base_stages = list(base.stages) if base is not None else []
    count = max([len(base_stages), *stage_values]) if (base_stages or stage_values) else 0
    if count == 0:
        raise ConfigParseError("no variant and no stages given", 1)

    stages = []
    for index in range(1, count + 1):
        overrides = stage_values.get(index, {})
        line_no = stage_lines.get(index, variant_line)
        try:
            if index <= len(base_stages):
                stages.append(replace(base_stages[index - 1], **overrides))
                continue
            if not overrides:
                later = min(i for i in stage_values if i > index)
                raise ConfigParseError(f"stage{index} is missing but stage{later} is given", stage_lines[later])
            missing = [name for name, attr in STAGE_FIELDS.items() if attr not in overrides]
            if missing:
                raise ConfigParseError(f"stage{index} is missing {', '.join(missing)}", line_no)
            stages.append(StageConfig(**overrides))
        except InvalidConfigError as exc:
            raise ConfigParseError(str(exc), line_no) from None

    if "variant_name" not in settings:
        settings["variant_name"] = base.variant_name if base is not None else "custom"
    try:
        if base is not None:
            return replace(base, stages=tuple(stages), **settings)
        return ModelConfig(stages=tuple(stages), **settings)
    except InvalidConfigError as exc:
        raise ConfigParseError(str(exc), last_override_line or variant_line) from None


def render_config(config):
    """Explicit, variant-free text form; parse_config(render_config(c)) == c."""
    lines = [
        f"# {config.variant_name}",
        f"name = {config.variant_name}",
        f"num_classes = {config.num_classes}",
    ]
    for flag in FLAG_KEYS:
        lines.append(f"{flag} = {'true' if getattr(config, flag) else 'false'}")
    for index, stage in enumerate(config.stages, start=1):
        for short, attr in STAGE_FIELDS.items():
            value = getattr(stage, attr)
            rendered = value.describe() if attr == "attn" else value
            lines.append(f"stage{index}.{short} = {rendered}")
    return "\n".join(lines) + "\n"


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())

from sdoh_eventkit.schema import (
    Event,
    EventType,
    LabeledArg,
    LabeledArgType,
    Span,
    SpanOnlyArg,
    SpanOnlyArgType,
    Trigger,
)


def ev(event_type, start, end, *args):
    """Compact event builder: args are (name, start, end) or (name, subtype, start, end)."""
    built = []
    for a in args:
        if len(a) == 4:
            built.append(LabeledArg(LabeledArgType(a[0]), a[1], Span(a[2], a[3])))
        else:
            built.append(SpanOnlyArg(SpanOnlyArgType(a[0]), Span(a[1], a[2])))
    return Event(Trigger(EventType(event_type), Span(start, end)), tuple(built))

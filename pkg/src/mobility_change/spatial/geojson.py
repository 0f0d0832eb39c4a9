"""GeoJSON FeatureCollection input and property joins."""

import copy
import json

from ..exceptions import DataError
from .weights import RegionGeometry


def _polygons(geometry):
    kind = geometry.get("type")
    coords = geometry.get("coordinates")
    if kind == "Polygon":
        return [coords]
    if kind == "MultiPolygon":
        return list(coords)
    raise DataError(f"unsupported geometry type {kind!r}; expected Polygon or MultiPolygon")


def _load(source):
    if isinstance(source, dict):
        return source
    with open(source, encoding="utf-8") as fh:
        return json.load(fh)


def read_geometries(source, id_property="region_id"):
    """Parse polygon features keyed by ``id_property``.

    ``source`` is a path or an already-loaded FeatureCollection dict.
    Features without geometry are skipped.
    """
    doc = _load(source)
    if doc.get("type") != "FeatureCollection":
        raise DataError("expected a GeoJSON FeatureCollection")
    out = []
    for k, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        if id_property not in props:
            raise DataError(f"feature {k} has no {id_property!r} property")
        geom = feat.get("geometry")
        if geom is None:
            continue
        rings = [[[tuple(map(float, pt[:2])) for pt in ring] for ring in poly] for poly in _polygons(geom)]
        out.append(RegionGeometry(str(props[id_property]), rings))
    return out


def feature_collection(geometries, properties=None, id_property="region_id"):
    properties = properties or {}
    features = []
    for g in geometries:
        props = {id_property: g.region_id, **properties.get(g.region_id, {})}
        if len(g.polygons) == 1:
            geom = {"type": "Polygon", "coordinates": [[list(pt) for pt in ring] for ring in g.polygons[0]]}
        else:
            geom = {
                "type": "MultiPolygon",
                "coordinates": [[[list(pt) for pt in ring] for ring in poly] for poly in g.polygons],
            }
        features.append({"type": "Feature", "properties": props, "geometry": geom})
    return {"type": "FeatureCollection", "features": features}


def join_properties(source, properties, id_property="region_id"):
    """Copy of a FeatureCollection with ``properties[region_id]`` merged in.

    Features whose id has no entry are kept unchanged.
    """
    doc = copy.deepcopy(_load(source))
    for feat in doc.get("features", []):
        props = feat.setdefault("properties", {})
        key = str(props.get(id_property))
        props.update(properties.get(key, {}))
    return doc


def write_geojson(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")

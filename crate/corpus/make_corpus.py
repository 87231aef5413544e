#!/usr/bin/env python3
"""Regenerates the identification exemplar corpus.

Binary exemplars come from independent producers (Pillow for TIFF,
reportlab for PDF, Python's zipfile for ZIP containers) so the magic
numbers checked by the Rust test suite are not copied from the engine.
Layout: corpus/<format>/<case>.<ext>
"""
import os
import random
import zipfile

from PIL import Image
from reportlab.pdfgen import canvas

ROOT = os.path.dirname(os.path.abspath(__file__))

IFC4 = """ISO-10303-21;
HEADER;
/* minimal IFC4 exemplar */
FILE_DESCRIPTION(('ViewDefinition [ReferenceView_V1.2]'),'2;1');
FILE_NAME('minimal.ifc','2024-05-01T10:00:00',('Archivist'),('Building Authority'),'hand-written','exemplar','');
FILE_SCHEMA(('IFC4'));
ENDSEC;
DATA;
#1=IFCPERSON($,'Doe','John',$,$,$,$,$);
#2=IFCORGANIZATION($,'Building Authority',$,$,$);
#3=IFCPROJECT('2O2Fr$t4X7Zf8NOew3FLOH',$,'Fire station',$,$,$,$,$,$);
#4=IFCWALL('1hqIFTRjfV6AWq_bMtnZwI',$,'Wall ''A''',$,$,$,$,$,.STANDARD.);
ENDSEC;
END-ISO-10303-21;
"""

IFC2X3 = """ISO-10303-21;
HEADER;
FILE_DESCRIPTION(('ViewDefinition [CoordinationView_V2.0]'),'2;1');
FILE_NAME('office.ifc','2011-03-14T09:30:00',('Planner'),('Office'),'hand-written','exemplar','');
FILE_SCHEMA(('IFC2X3'));
ENDSEC;
DATA;
#1=IFCPROJECT('0YvctVUKr0kugbFTf53O9L',$,'Office',$,$,$,$,$,$);
#2=IFCSITE('1cwlDi_hLEvPsClAelBNnz',$,'Site',$,$,$,$,$,.ELEMENT.,$,$,$,$,$);
ENDSEC;
END-ISO-10303-21;
"""

AP214 = """ISO-10303-21;
HEADER;
FILE_DESCRIPTION(('part'),'2;1');
FILE_NAME('bracket.stp','1999-01-01T00:00:00',(''),(''),'hand-written','exemplar','');
FILE_SCHEMA(('AUTOMOTIVE_DESIGN { 1 0 10303 214 1 1 1 1 }'));
ENDSEC;
DATA;
#10=CARTESIAN_POINT('',(0.,0.,0.));
ENDSEC;
END-ISO-10303-21;
"""

IFCXML4 = """<?xml version="1.0" encoding="UTF-8"?>
<!-- minimal ifcXML exemplar -->
<ifcXML xmlns="http://www.buildingsmart-tech.org/ifcXML/IFC4/Add2" header="header">
  <IfcProject id="i1" GlobalId="2O2Fr$t4X7Zf8NOew3FLOH" Name="Fire station"/>
</ifcXML>
"""

IFCXML2X3 = """<?xml version="1.0" encoding="UTF-8"?>
<ex:iso_10303_28 xmlns:ex="urn:oid:1.0.10303.28.2.1.1" version="2.0">
  <ex:iso_10303_28_header><ex:name>office.ifcxml</ex:name></ex:iso_10303_28_header>
</ex:iso_10303_28>
"""

PLAIN_XML = """<?xml version="1.0"?>
<catalog><item>not a building model</item></catalog>
"""

HPGL = "IN;SP1;PU0,0;PD1000,0,1000,1000,0,1000,0,0;PU;SP0;\n"


def write(rel, data):
    path = os.path.join(ROOT, rel)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode, newline="" if mode == "w" else None) as f:
        f.write(data)
    return path


def main():
    write("step/minimal.ifc", IFC4)
    write("step/ifc2x3.ifc", IFC2X3)
    write("step/ap214.stp", AP214)
    write("ifcxml/ifc4.ifcxml", IFCXML4)
    write("ifcxml/ifc2x3.ifcxml", IFCXML2X3)
    write("xml/catalog.xml", PLAIN_XML)
    write("plot/drawing.plt", HPGL)

    os.makedirs(os.path.join(ROOT, "ifczip"), exist_ok=True)
    with zipfile.ZipFile(os.path.join(ROOT, "ifczip/model.ifczip"), "w", zipfile.ZIP_DEFLATED) as z:
        z.writestr("model.ifc", IFC4)
    os.makedirs(os.path.join(ROOT, "zip"), exist_ok=True)
    with zipfile.ZipFile(os.path.join(ROOT, "zip/notes.zip"), "w", zipfile.ZIP_DEFLATED) as z:
        z.writestr("readme.txt", "plain archive without a building model\n")

    os.makedirs(os.path.join(ROOT, "tiff"), exist_ok=True)
    Image.new("L", (16, 16), 200).save(os.path.join(ROOT, "tiff/plan-le.tif"))
    Image.new("I;16B", (16, 16), 1000).save(os.path.join(ROOT, "tiff/plan-be.tif"))

    os.makedirs(os.path.join(ROOT, "pdf"), exist_ok=True)
    c = canvas.Canvas(os.path.join(ROOT, "pdf/handbook.pdf"), invariant=1)
    c.drawString(72, 720, "Project handbook")
    c.save()

    rng = random.Random(20221)
    noise = bytes(rng.randrange(256) for _ in range(512))
    # keep the noise clear of any leading magic
    noise = b"\x00\x13" + noise[2:]
    write("unknown/noise.bin", noise)
    write("unknown/notes.txt", "meeting notes, no recognisable signature\n")
    write("unknown/empty.dat", b"")


if __name__ == "__main__":
    main()

"""
PDF Exporter for Verification Reports
Renders the check table of a verification run (name, kind, worst slack,
tolerance, verdict) together with the constant ledger as a formatted PDF.
"""

from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.lib.enums import TA_LEFT, TA_CENTER
from reportlab.lib import colors
from reportlab.platypus import SimpleDocTemplate, Paragraph, Spacer, Table, TableStyle
from datetime import datetime
from typing import Any, Dict, List, Optional
import os

PASS_COLOR = colors.HexColor('#E2F0D9')
FAIL_COLOR = colors.HexColor('#F8D7DA')
SKIP_COLOR = colors.HexColor('#EDEDED')


class VerifyReportPDFExporter:
    """
    PDF exporter for verification reports.
    One summary block, one table of checks and one table of constants.
    """

    def __init__(self):
        self.styles = getSampleStyleSheet()
        self._create_custom_styles()

    def _create_custom_styles(self):
        self.styles.add(ParagraphStyle(
            name='CustomTitle',
            parent=self.styles['Title'],
            fontName='Times-Bold',
            fontSize=22,
            leading=28,
            textColor=colors.HexColor('#1F4788'),
            alignment=TA_CENTER,
            spaceAfter=20,
            spaceBefore=10
        ))

        self.styles.add(ParagraphStyle(
            name='CustomHeading1',
            parent=self.styles['Heading1'],
            fontName='Times-Bold',
            fontSize=16,
            leading=20,
            textColor=colors.HexColor('#1F4788'),
            spaceBefore=16,
            spaceAfter=10,
            alignment=TA_LEFT
        ))

        self.styles.add(ParagraphStyle(
            name='Metadata',
            parent=self.styles['Normal'],
            fontName='Times-Italic',
            fontSize=9,
            leading=12,
            textColor=colors.HexColor('#666666'),
            alignment=TA_CENTER,
            spaceAfter=16
        ))

        # table cells
        self.styles.add(ParagraphStyle(
            name='Cell',
            parent=self.styles['Normal'],
            fontName='Courier',
            fontSize=8,
            leading=10,
        ))

    def _add_header_footer(self, canvas_obj, doc):
        canvas_obj.saveState()
        canvas_obj.setFont('Times-Italic', 9)
        canvas_obj.setFillColor(colors.HexColor('#666666'))
        canvas_obj.drawCentredString(letter[0] / 2, 0.5 * inch, f"Page {doc.page}")
        canvas_obj.setStrokeColor(colors.HexColor('#2E75B5'))
        canvas_obj.setLineWidth(0.5)
        canvas_obj.line(0.75 * inch, letter[1] - 0.5 * inch, letter[0] - 0.75 * inch, letter[1] - 0.5 * inch)
        canvas_obj.restoreState()

    def generate_pdf(self, report: Dict[str, Any], output_path: str,
                     title: str = "SVGD Bound Verification") -> str:
        """
        Write a verification report to PDF.

        Args:
            report: Output of ``VerifyReport.to_dict()``.
            output_path: Destination file.
            title: Title line under the package name.

        Returns:
            str: Path to the generated PDF file
        """
        doc = SimpleDocTemplate(
            output_path,
            pagesize=letter,
            rightMargin=0.75 * inch,
            leftMargin=0.75 * inch,
            topMargin=1 * inch,
            bottomMargin=0.75 * inch
        )
        story = []
        story.append(Paragraph(f"<b>{title}</b>", self.styles['CustomTitle']))

        checks = report.get("checks", [])
        failed = [c for c in checks if c.get("verdict") == "FAIL"]
        meta_text = f"Generated on {datetime.now().strftime('%B %d, %Y at %I:%M %p')}"
        if report.get("name"):
            meta_text += f"<br/>Experiment: <b>{self._escape(report['name'])}</b>"
        meta_text += f"<br/>Checks: <b>{len(checks)}</b>, failed: <b>{len(failed)}</b>"
        meta_text += f"<br/>Verdict: <b>{report.get('verdict', 'n/a')}</b>"
        story.append(Paragraph(meta_text, self.styles['Metadata']))
        story.append(self._create_separator())
        story.append(Spacer(1, 0.2 * inch))

        story.append(Paragraph("<b>Checks</b>", self.styles['CustomHeading1']))
        story.append(self._checks_table(checks))

        ledger = report.get("ledger")
        if ledger:
            story.append(Spacer(1, 0.3 * inch))
            story.append(Paragraph("<b>Constants</b>", self.styles['CustomHeading1']))
            story.append(self._ledger_table(ledger))

        doc.build(story, onFirstPage=self._add_header_footer, onLaterPages=self._add_header_footer)
        return output_path

    @staticmethod
    def _escape(text: Any) -> str:
        return str(text).replace('&', '&amp;').replace('<', '&lt;').replace('>', '&gt;')

    @staticmethod
    def _format_number(value: Any) -> str:
        if value is None:
            return "-"
        if isinstance(value, float):
            return f"{value:.6g}"
        return str(value)

    def _checks_table(self, checks: List[Dict[str, Any]]) -> Table:
        rows = [["check", "kind", "worst slack", "tolerance", "verdict"]]
        shading = []
        for i, check in enumerate(checks, start=1):
            verdict = "SKIP" if check.get("skipped") else check.get("verdict", "")
            name = check.get("name", "")
            note = check.get("error") or check.get("detail")
            if note:
                name = f"{name}<br/><font size=6>{self._escape(note)[:160]}</font>"
            rows.append([Paragraph(name, self.styles['Cell']), check.get("kind", ""),
                         self._format_number(check.get("worst_slack")),
                         self._format_number(check.get("tolerance")), verdict])
            color = SKIP_COLOR if verdict == "SKIP" else (PASS_COLOR if verdict == "PASS" else FAIL_COLOR)
            shading.append(('BACKGROUND', (0, i), (-1, i), color))
        table = Table(rows, colWidths=[2.9 * inch, 0.6 * inch, 1.1 * inch, 0.9 * inch, 0.7 * inch],
                      repeatRows=1)
        table.setStyle(TableStyle([
            ('FONTNAME', (0, 0), (-1, 0), 'Times-Bold'),
            ('FONTNAME', (1, 1), (-1, -1), 'Courier'),
            ('FONTSIZE', (0, 0), (-1, -1), 8),
            ('LINEBELOW', (0, 0), (-1, 0), 1, colors.HexColor('#2E75B5')),
            ('VALIGN', (0, 0), (-1, -1), 'TOP'),
        ] + shading))
        return table

    def _ledger_table(self, ledger: Dict[str, Any]) -> Table:
        rows = [[key, self._format_number(value)] for key, value in ledger.items()]
        table = Table(rows, colWidths=[2.0 * inch, 3.0 * inch])
        table.setStyle(TableStyle([
            ('FONTNAME', (0, 0), (-1, -1), 'Courier'),
            ('FONTSIZE', (0, 0), (-1, -1), 8),
            ('ROWBACKGROUNDS', (0, 0), (-1, -1), [colors.white, colors.HexColor('#F5F5F5')]),
        ]))
        return table

    def _create_separator(self):
        return Table(
            [['']],
            colWidths=[6.5 * inch],
            style=TableStyle([
                ('LINEABOVE', (0, 0), (-1, 0), 1, colors.HexColor('#2E75B5')),
                ('TOPPADDING', (0, 0), (-1, -1), 0),
                ('BOTTOMPADDING', (0, 0), (-1, -1), 0),
            ])
        )


def export_verify_report_to_pdf(report: Dict[str, Any], filename: Optional[str] = None,
                                output_dir: str = "output") -> str:
    """
    Convenience function to export a verification report to PDF.

    Args:
        report: Output of ``VerifyReport.to_dict()``.
        filename: Optional file name (without path); timestamped by default.
        output_dir: Directory to write into.

    Returns:
        str: Path to generated PDF file
    """
    os.makedirs(output_dir, exist_ok=True)
    if not filename:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        filename = f"svgd_verify_{timestamp}.pdf"
    if not filename.endswith('.pdf'):
        filename += '.pdf'
    return VerifyReportPDFExporter().generate_pdf(report, os.path.join(output_dir, filename))

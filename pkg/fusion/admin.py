from django.contrib import admin
from .models import AgentRecord, AlignmentRecord, EvaluationRecord


@admin.register(AgentRecord)
class AgentRecordAdmin(admin.ModelAdmin):
    list_display = ['agent_id', 'payload', 'metric', 'is_origin', 'state', 'frames_received', 'updated_at']
    list_filter = ['state', 'payload', 'metric']


@admin.register(AlignmentRecord)
class AlignmentRecordAdmin(admin.ModelAdmin):
    list_display = ['agent', 'anchor_id', 'accepted', 'reason', 'stage1_translation', 'stage2_translation',
                    'created_at']
    list_filter = ['accepted', 'reason']


@admin.register(EvaluationRecord)
class EvaluationRecordAdmin(admin.ModelAdmin):
    list_display = ['run', 'mode', 'agent_id', 'psnr', 'depth_l1', 'translation_err', 'created_at']
    list_filter = ['mode']
